"""hslab 异常层级

CLI 依据异常类型选择退出码：配置错误 2，求解失败 3，不变量检查失败 4。
"""

from typing import Optional

import numpy as np


class HslabError(Exception):
    """所有 hslab 异常的基类"""

    exit_code = 1


class ConfigError(HslabError, ValueError):
    """配置文件缺失、键非法或参数越界"""

    exit_code = 2


class GeometryError(HslabError, ValueError):
    """区域参数组合非法（子午线自交、锥角越界等）"""

    exit_code = 2


class MeshQualityError(GeometryError):
    """网格单元退化，低于质量下限"""


class ConvergenceError(HslabError, RuntimeError):
    """迭代未收敛；best 保存迭代过程中最好的结果"""

    exit_code = 3

    def __init__(self, message: str, best: Optional[np.ndarray] = None, iterations: int = 0):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


class CoercivityError(HslabError, RuntimeError):
    """Δ + a 在自由节点上不是正定的"""

    exit_code = 3


class InvariantViolation(HslabError, AssertionError):
    """实验输出违反了约定的不变量"""

    exit_code = 4
