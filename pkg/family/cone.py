"""
锥族 cone

区域为 {x : ∠(x, −e₁) < θ₀} ∩ B_R，θ₀ 是半顶角。
0 是顶点而不是光滑边界点，因此没有边界图，也没有曲率数据；
这类区域只用于最佳常数实验。
"""

import math
from typing import Optional

from core.errors import GeometryError
from core.interface import MeridianFamily
from core.model import BoundaryChart, CurvatureData, DomainSpec


class Cone(MeridianFamily):
    family = "cone"

    def validate(self, spec: DomainSpec) -> None:
        super().validate(spec)
        if spec.aperture is None:
            raise GeometryError("cone 需要 aperture（半顶角，弧度）")
        if not 0.0 < spec.aperture < math.pi:
            raise GeometryError(f"aperture 必须位于 (0, π)，当前为 {spec.aperture}")

    def aperture(self, spec: DomainSpec) -> float:
        return float(spec.aperture)

    def chart(self, spec: DomainSpec) -> Optional[BoundaryChart]:
        return None

    def curvature(self, spec: DomainSpec) -> Optional[CurvatureData]:
        return None
