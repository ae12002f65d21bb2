"""子午线区域族注册表

新增区域族：在 family/ 下新建模块实现 MeridianFamily，并在 FAMILIES 中登记一行。
"""

from typing import Dict, Type

from core.errors import GeometryError
from core.interface import MeridianFamily
from family.cone import Cone
from family.custom import CustomMeridian
from family.perturbed import PerturbedHalfBall
from family.star import StarShapedHalfBall

FAMILIES: Dict[str, Type[MeridianFamily]] = {
    PerturbedHalfBall.family: PerturbedHalfBall,
    StarShapedHalfBall.family: StarShapedHalfBall,
    Cone.family: Cone,
    CustomMeridian.family: CustomMeridian,
}


def get_family(name: str) -> MeridianFamily:
    try:
        return FAMILIES[name]()
    except KeyError:
        raise GeometryError(f"未注册的区域族: {name}") from None
