"""
星形半球族 star-shaped-half-ball

φ₀(r) = −(α/2) r²，不做截断，α ≥ 0。生成的区域在 0 处凸，
网格生成后由 make_domain 检查 (x, ν) ≥ 0。
"""

from typing import Optional

import numpy as np

from core.errors import GeometryError
from core.interface import MeridianFamily
from core.model import BoundaryChart, CurvatureData, DomainSpec
from family.perturbed import axisymmetric_curvature


class StarShapedHalfBall(MeridianFamily):
    """关于 0 星形的凸帽区域"""

    family = "star-shaped-half-ball"
    star_shaped = True

    def validate(self, spec: DomainSpec) -> None:
        super().validate(spec)
        if spec.kappa < 0:
            raise GeometryError(f"星形半球要求 kappa ≥ 0，当前为 {spec.kappa}")
        if spec.aperture is not None:
            raise GeometryError(f"{self.family} 不接受 aperture 参数")

    def chart(self, spec: DomainSpec) -> Optional[BoundaryChart]:
        alpha = float(spec.kappa)

        def phi0(r):
            r = np.asarray(r, dtype=float)
            return -0.5 * alpha * r ** 2

        def dphi0(r):
            r = np.asarray(r, dtype=float)
            return -alpha * np.abs(r)

        return BoundaryChart(phi0=phi0, dphi0=dphi0, valid_radius=spec.radius, hessian_at_0=-alpha)

    def curvature(self, spec: DomainSpec) -> Optional[CurvatureData]:
        return axisymmetric_curvature(spec.n, spec.kappa)
