"""
扰动半球族 perturbed-half-ball

子午线 φ₀(r) = −(α/2) r² · χ(r/ρ_c)，χ 为光滑截断：
t ≤ 1/2 时 χ = 1，t ≥ 1 时 χ = 0，中间用五次 smoothstep 过渡。
原点附近 φ₀ 精确为抛物线，因此 0 处的主曲率恰为 α；
r ≥ ρ_c 时边界回到环境半球。
"""

from typing import Optional

import numpy as np

from core.errors import GeometryError
from core.interface import MeridianFamily
from core.model import BoundaryChart, CurvatureData, DomainSpec


def smooth_cutoff(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    u = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


def smooth_cutoff_derivative(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    u = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    return -2.0 * 30.0 * u ** 2 * (1.0 - u) ** 2


def axisymmetric_curvature(n: int, kappa: float) -> CurvatureData:
    """所有 n−1 个主曲率都等于 kappa 的曲率数据，II₀ = −D²φ₀ = κ·Id"""
    return CurvatureData(
        alphas=tuple([float(kappa)] * (n - 1)),
        mean_curvature_trace=float((n - 1) * kappa),
        II0=float(kappa) * np.eye(n - 1),
    )


class PerturbedHalfBall(MeridianFamily):
    """原点处曲率为 α 的半球扰动"""

    family = "perturbed-half-ball"

    def cutoff_radius(self, spec: DomainSpec) -> float:
        return spec.cutoff * spec.radius

    def polynomial(self, spec: DomainSpec):
        """截断前的子午线多项式及其导数"""
        alpha = spec.kappa

        def f(r):
            return -0.5 * alpha * r ** 2

        def df(r):
            return -alpha * r

        return f, df

    def chart(self, spec: DomainSpec) -> Optional[BoundaryChart]:
        f, df = self.polynomial(spec)
        rho = self.cutoff_radius(spec)

        def phi0(r):
            r = np.abs(np.asarray(r, dtype=float))
            return f(r) * smooth_cutoff(r / rho)

        def dphi0(r):
            r = np.abs(np.asarray(r, dtype=float))
            return df(r) * smooth_cutoff(r / rho) + f(r) * smooth_cutoff_derivative(r / rho) / rho

        return BoundaryChart(
            phi0=phi0,
            dphi0=dphi0,
            valid_radius=spec.radius,
            hessian_at_0=-float(spec.kappa),
        )

    def curvature(self, spec: DomainSpec) -> Optional[CurvatureData]:
        return axisymmetric_curvature(spec.n, spec.kappa)

    def validate(self, spec: DomainSpec) -> None:
        super().validate(spec)
        if spec.aperture is not None:
            raise GeometryError(f"{self.family} 不接受 aperture 参数")
