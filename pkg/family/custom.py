"""
自定义子午线族 custom-meridian

φ₀(r) = (−(α/2) r² + Σ_k c_k r^k) · χ(r/ρ_c)，k 从 3 开始，
coefficients = (c_3, c_4, ...)。高阶项不改变 0 处的曲率。
"""

import numpy as np

from core.errors import GeometryError
from core.model import DomainSpec
from family.perturbed import PerturbedHalfBall


class CustomMeridian(PerturbedHalfBall):
    family = "custom-meridian"

    def validate(self, spec: DomainSpec) -> None:
        super().validate(spec)
        if not np.all(np.isfinite(spec.coefficients)):
            raise GeometryError("coefficients 必须是有限实数")

    def polynomial(self, spec: DomainSpec):
        alpha = spec.kappa
        coeffs = spec.coefficients

        def f(r):
            out = -0.5 * alpha * r ** 2
            for k, c in enumerate(coeffs, start=3):
                out = out + c * r ** k
            return out

        def df(r):
            out = -alpha * r
            for k, c in enumerate(coeffs, start=3):
                out = out + k * c * r ** (k - 1)
            return out

        return f, df
