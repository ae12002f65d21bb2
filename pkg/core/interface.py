from abc import ABC, abstractmethod
from typing import Optional
import math

from core.errors import GeometryError
from core.model import BoundaryChart, CurvatureData, DomainSpec


class MeridianFamily(ABC):
    family: str
    # 为 True 时，make_domain 在网格生成后强制检查星形条件
    star_shaped: bool = False

    def validate(self, spec: DomainSpec) -> None:
        """检查参数组合，非法时抛出 GeometryError"""
        if spec.family != self.family:
            raise GeometryError(f"区域族不匹配: {spec.family} != {self.family}")

    def aperture(self, spec: DomainSpec) -> float:
        """参考扇形的半顶角 θ₀；半球为 π/2"""
        return math.pi / 2

    @abstractmethod
    def chart(self, spec: DomainSpec) -> Optional[BoundaryChart]:
        """返回边界图；没有光滑边界图的区域返回 None"""
        ...

    @abstractmethod
    def curvature(self, spec: DomainSpec) -> Optional[CurvatureData]:
        """返回 0 处的曲率数据；无定义时返回 None"""
        ...


class Notifier(ABC):
    @abstractmethod
    def notify(self, summary: dict) -> None:
        """
        发送一次运行的摘要
        摘要中的 output_hash 用于去重：同一输出只推送一次
        """
        ...
