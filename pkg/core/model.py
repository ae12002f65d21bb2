"""hslab 的值类型

所有类型都是不可变 dataclass；携带 numpy 数组的类型使用 eq=False，
按对象身份哈希，便于在缓存中作为键使用，数组在构造后设为只读。
"""

from dataclasses import dataclass, field, asdict
from enum import IntEnum
from typing import Callable, Dict, Optional, Tuple, Union
import hashlib
import json
import math

import numpy as np
import scipy.sparse as sp


FAMILY_NAMES = (
    "perturbed-half-ball",
    "cone",
    "star-shaped-half-ball",
    "custom-meridian",
)


def critical_exponent(n: int, s: float) -> float:
    """Hardy–Sobolev 临界指数 2⋆ = 2(n−s)/(n−2)"""
    return 2.0 * (n - s) / (n - 2)


def sphere_area(k: int) -> float:
    """单位 k 维球面 S^k ⊂ R^{k+1} 的面积"""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class NodeTag(IntEnum):
    INTERIOR = 0
    AXIS = 1
    DIRICHLET = 2
    SINGULAR_VERTEX = 3


class EdgeTag(IntEnum):
    AXIS = 1
    DIRICHLET = 2


@dataclass(frozen=True)
class DomainSpec:
    """曲率参数化区域的描述，0 位于边界上"""

    n: int = 3
    s: float = 1.0
    family: str = "perturbed-half-ball"
    kappa: float = 0.0
    radius: float = 1.0
    meridian_samples: int = 16
    aperture: Optional[float] = None      # 锥的半顶角 θ₀，仅 cone 使用
    h_min: Optional[float] = None         # 原点附近的最小网格尺寸
    coefficients: Tuple[float, ...] = ()  # custom-meridian 的 r^3, r^4, ... 系数
    cutoff: float = 0.5                   # 截断半径 ρ_c 与 radius 之比

    def __post_init__(self):
        from core.errors import GeometryError

        if int(self.n) != self.n or self.n < 3:
            raise GeometryError(f"维数 n 必须是 ≥ 3 的整数，当前为 {self.n}")
        if not 0.0 < self.s < 2.0:
            raise GeometryError(f"s 必须位于 (0, 2)，当前为 {self.s}")
        if self.radius <= 0:
            raise GeometryError(f"radius 必须为正，当前为 {self.radius}")
        if self.family not in FAMILY_NAMES:
            raise GeometryError(f"未知的区域族: {self.family}")
        if self.meridian_samples < 4:
            raise GeometryError("meridian_samples 至少为 4")
        if self.h_min is not None and self.h_min <= 0:
            raise GeometryError("h_min 必须为正")
        if not 0.0 < self.cutoff <= 1.0:
            raise GeometryError("cutoff 必须位于 (0, 1]")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))

    @property
    def critical_exponent(self) -> float:
        return critical_exponent(self.n, self.s)

    @property
    def weight_exponent(self) -> int:
        return self.n - 2

    @property
    def hash(self) -> str:
        unique_string = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(unique_string.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BoundaryChart:
    """边界图 (x₁, y) ↦ (x₁ + φ₀(|y|), y)"""

    phi0: Callable[[np.ndarray], np.ndarray]
    dphi0: Callable[[np.ndarray], np.ndarray]
    valid_radius: float
    hessian_at_0: float


@dataclass(frozen=True, eq=False)
class CurvatureData:
    alphas: Tuple[float, ...]
    mean_curvature_trace: float
    II0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "II0", _frozen(self.II0))

    def second_form(self, x) -> np.ndarray:
        """II₀(x, x)，x 的最后一维为切平面坐标"""
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.II0, x)


@dataclass(frozen=True, eq=False)
class MeridianMesh:
    """子午面 (x₁, r) 上的 P1 三角网格，体积权重 c_n r^{n−2}"""

    spec: DomainSpec
    nodes: np.ndarray          # (N, 2) 物理坐标
    ref_nodes: np.ndarray      # (N, 2) 参考扇形中的坐标，用于加密
    cells: np.ndarray          # (M, 3) 逆时针
    node_tags: np.ndarray      # (N,) NodeTag
    edges: np.ndarray          # (E, 2) 边界边
    edge_tags: np.ndarray      # (E,) EdgeTag
    edge_on_arc: np.ndarray    # (E,) 是否位于外圆弧 ρ = R 上
    origin: int
    h: float
    chart: Optional[BoundaryChart] = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes))
        object.__setattr__(self, "ref_nodes", _frozen(self.ref_nodes))
        object.__setattr__(self, "cells", _frozen(self.cells, dtype=np.int64))
        object.__setattr__(self, "node_tags", _frozen(self.node_tags, dtype=np.int64))
        object.__setattr__(self, "edges", _frozen(self.edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "edge_tags", _frozen(self.edge_tags, dtype=np.int64))
        object.__setattr__(self, "edge_on_arc", _frozen(self.edge_on_arc, dtype=bool))

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def weight_exponent(self) -> int:
        return self.spec.n - 2

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dirichlet(self) -> np.ndarray:
        mask = (self.node_tags == NodeTag.DIRICHLET) | (self.node_tags == NodeTag.SINGULAR_VERTEX)
        return np.flatnonzero(mask)

    @property
    def free(self) -> np.ndarray:
        mask = (self.node_tags == NodeTag.INTERIOR) | (self.node_tags == NodeTag.AXIS)
        return np.flatnonzero(mask)

    @property
    def dirichlet_edges(self) -> np.ndarray:
        return self.edges[self.edge_tags == EdgeTag.DIRICHLET]


@dataclass(frozen=True)
class Coefficient:
    """标量场 a(x₁, r)；value 为常数或可调用对象，gradient 缺省时用中心差分"""

    value: Union[float, Callable[[np.ndarray], np.ndarray]] = 0.0
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def coerce(cls, a) -> "Coefficient":
        if isinstance(a, Coefficient):
            return a
        if a is None:
            return cls(0.0)
        return cls(a)

    @property
    def is_constant(self) -> bool:
        return not callable(self.value)

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_constant:
            return np.full(len(points), float(self.value))
        return np.asarray(self.value(points), dtype=float).reshape(len(points))

    def grad(self, points, step: float = 1e-6) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_constant:
            return np.zeros_like(points)
        if self.gradient is not None:
            return np.asarray(self.gradient(points), dtype=float).reshape(points.shape)
        out = np.empty_like(points)
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = step
            out[:, axis] = (self(points + shift) - self(points - shift)) / (2 * step)
        return out

    def minimum(self, points) -> float:
        return float(np.min(self(points)))


@dataclass(frozen=True, eq=False)
class SingularQuadrature:
    """网格上的求积规则

    weights 对应 ∫ f c_n r^{n−2}，weights_s 再乘以 |x − center|^{−s}（及可选的额外权）。
    与原点相邻的单元使用顶点 Duffy 规则，其余单元使用 6 点规则。
    """

    points: np.ndarray       # (Q, 2)
    cells: np.ndarray        # (Q,) 所在单元
    cell_nodes: np.ndarray   # (Q, 3)
    bary: np.ndarray         # (Q, 3)
    weights: np.ndarray      # (Q,)
    weights_s: np.ndarray    # (Q,)
    s: float
    num_nodes: int

    def __post_init__(self):
        for name in ("points", "bary", "weights", "weights_s"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "cells", _frozen(self.cells, dtype=np.int64))
        object.__setattr__(self, "cell_nodes", _frozen(self.cell_nodes, dtype=np.int64))

    def _w(self, singular: bool) -> np.ndarray:
        return self.weights_s if singular else self.weights

    def interpolate(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.einsum("qi,qi->q", self.bary, u[self.cell_nodes])

    def integrate(self, values, singular: bool = True) -> float:
        return float(np.dot(self._w(singular), values))

    def load(self, values, singular: bool = True) -> np.ndarray:
        """节点载荷 b_i = Σ_q w_q f_q φ_i(x_q)"""
        contrib = (self._w(singular) * np.asarray(values, dtype=float))[:, None] * self.bary
        return np.bincount(self.cell_nodes.ravel(), weights=contrib.ravel(), minlength=self.num_nodes)

    def matrix(self, values=None, singular: bool = True) -> sp.csr_matrix:
        """加权质量矩阵 Σ_q w_q f_q φ_i φ_j"""
        w = self._w(singular)
        if values is not None:
            w = w * np.asarray(values, dtype=float)
        data = w[:, None, None] * self.bary[:, :, None] * self.bary[:, None, :]
        rows = np.repeat(self.cell_nodes[:, :, None], 3, axis=2)
        cols = np.repeat(self.cell_nodes[:, None, :], 3, axis=1)
        shape = (self.num_nodes, self.num_nodes)
        return sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


@dataclass(frozen=True, eq=False)
class WeightedOperator:
    """Δ + a 的离散算子，Dirichlet 节点已在 free 索引中消去"""

    mesh: MeridianMesh
    coefficient: Coefficient
    laplace: sp.csr_matrix
    mass: sp.csr_matrix
    a_mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    free: np.ndarray
    lumped_mass: np.ndarray
    quadrature: SingularQuadrature
    coercive: bool
    lambda_min: float
    cache: Dict = field(default_factory=dict, repr=False)

    def restrict(self, matrix) -> sp.csc_matrix:
        return matrix[self.free][:, self.free].tocsc()

    def extend(self, values_free) -> np.ndarray:
        out = np.zeros(self.mesh.num_nodes)
        out[self.free] = values_free
        return out


@dataclass(frozen=True, eq=False)
class SubcriticalProblem:
    mesh: MeridianMesh
    s: float
    p: float
    a: Coefficient = field(default_factory=Coefficient)
    tol: float = 1e-9
    step_tol: float = 1e-7
    max_iter: int = 400
    newton_max_iter: int = 30
    seed: str = "torsion"
    seed_width: float = 0.25
    source: Optional[Callable[[np.ndarray], np.ndarray]] = None
    cache: Dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "a", Coefficient.coerce(self.a))
        n = self.mesh.n
        if not 0.0 <= self.s < 2.0:
            raise ValueError(f"s 必须位于 [0, 2)，当前为 {self.s}")
        pc = critical_exponent(n, self.s)
        if self.p != 2.0 and not 2.0 < self.p <= pc + 1e-12:
            raise ValueError(f"p 必须位于 (2, 2⋆={pc:.6g}] 或等于 2，当前为 {self.p}")
        if self.seed not in ("torsion", "bump"):
            raise ValueError(f"未知的初值类型: {self.seed}")

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def critical_exponent(self) -> float:
        return critical_exponent(self.mesh.n, self.s)

    @property
    def gap(self) -> float:
        return self.critical_exponent - self.p


@dataclass(frozen=True, eq=False)
class ExtremalResult:
    v: np.ndarray            # 归一化极值函数，∫|v|^p/|x|^s = 1
    mu: float                # μ_{s,p}
    residual: float
    iterations: int
    positive: bool
    energy: float            # ∫|∇v|²
    converged: bool
    solution: np.ndarray     # w = μ^{1/(p−2)} v，方程的解
    p: float
    s: float
    nehari_level: float

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.solution)))


@dataclass(frozen=True, eq=False)
class ContinuationRecord:
    p: float
    gap: float
    mu: float = float("nan")
    sup_norm: float = float("nan")
    energy: float = float("nan")
    pohozaev_defect: float = float("nan")
    bubble_count: int = 0
    smallest_scale: float = float("nan")
    blowup: bool = False
    failed: bool = False
    message: str = ""
    result: Optional[ExtremalResult] = None

    def row(self) -> Dict:
        return {
            "p": self.p,
            "gap": self.gap,
            "mu": self.mu,
            "sup_norm": self.sup_norm,
            "energy": self.energy,
            "pohozaev_defect": self.pohozaev_defect,
            "bubble_count": self.bubble_count,
            "smallest_scale": self.smallest_scale,
            "blowup": self.blowup,
            "failed": self.failed,
            "message": self.message,
        }


@dataclass(frozen=True)
class ContinuationTrace:
    records: Tuple[ContinuationRecord, ...]
    critical_exponent: float

    @property
    def grid(self) -> Tuple[float, ...]:
        return tuple(r.p for r in self.records)

    def sup_ratio(self) -> float:
        ok = [r for r in self.records if not r.failed]
        if len(ok) < 2:
            return float("nan")
        return ok[-1].sup_norm / ok[0].sup_norm


@dataclass(frozen=True, eq=False)
class LinearizationSpectrum:
    eigenvalues: np.ndarray
    nonpositive_count: int
    potential_norm: float    # ‖(p−1)|v|^{p−2}/|x|^s‖_{n/2}^{n/2}

    @property
    def li_yau_ratio(self) -> float:
        if self.potential_norm <= 0:
            return 0.0
        return self.nonpositive_count / self.potential_norm


@dataclass(frozen=True, eq=False)
class MountainPassResult:
    u: np.ndarray
    level: float
    residual: float
    iterations: int
    converged: bool
    sign_changing: bool
    nonpositive_count: int
    path_max: float = float("nan")          # 抛光前路径上的最大 I_p
    endpoint_energy: float = float("nan")   # 路径端点处的 I_p，< 0
    images: int = 0


@dataclass(frozen=True)
class PohozaevReport:
    radius: float
    lhs_volume: float
    rhs_boundary: float
    defect: float
    boundary_term: float     # ½∫_{∂Ω∩W}(x,ν)|∇u|²
    sphere_term: float       # 球面 ∂B_r ∩ Ω 上的余项
    source_term: float       # 源项 ∫(x·∇u)f + (n−2)/2 ∫uf

    def row(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class RatioPrediction:
    general: float
    mean_curvature: float
    bubble_energies: Tuple[float, ...]
    boundary_integral_II: float
    boundary_integral_r2: float
    alpha_limits: Tuple[float, ...]
    measured: Optional[float] = None
    asymptotic_only: bool = True

    def row(self) -> Dict:
        return {
            "general": self.general,
            "mean_curvature": self.mean_curvature,
            "boundary_integral_II": self.boundary_integral_II,
            "boundary_integral_r2": self.boundary_integral_r2,
            "measured": self.measured,
        }


@dataclass(frozen=True)
class BubbleScale:
    mu: float
    k: float
    center: Tuple[float, float]
    alpha_measured: float
    p_eps: float
    exponent: float          # 1 − p_ε/(2⋆ − 2)

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("μ 必须为正")


@dataclass(frozen=True, eq=False)
class BubbleProfile:
    """重标度剖面 ũ，定义在半球网格上"""

    mesh: MeridianMesh
    values: np.ndarray
    energy: float
    trace_r2: float          # ∫_{∂R^n_-} |x|²|∇ũ|²
    outside_fraction: float  # 落在区域之外、按 0 处理的节点比例


@dataclass(frozen=True, eq=False)
class BubbleDecomposition:
    scales: Tuple[BubbleScale, ...]
    weak_limit: np.ndarray
    profiles: Tuple[BubbleProfile, ...]
    residual_sup: float
    threshold: float
    capped: bool
    cut_radius: float
    C_co: float = float("nan")
    C_c1: float = float("nan")

    @property
    def count(self) -> int:
        return len(self.scales)


@dataclass(frozen=True)
class EnergyReport:
    total: float
    weak_limit: float
    bubbles: Tuple[float, ...]
    gap: float
    lower_bound: float
    each_above_bound: bool
    count_bound: float
    count_ok: bool


@dataclass(frozen=True, eq=False)
class GreenKernel:
    mesh: MeridianMesh
    pole: int
    pole_point: Tuple[float, float]
    values: np.ndarray
    reproduction_error: float
    on_axis: bool


@dataclass(frozen=True, eq=False)
class ParametrixTerm:
    order: int
    distances: np.ndarray
    values: np.ndarray
    bound_constant: float
    fitted_exponent: float
    target_exponent: float

    @property
    def bound_holds(self) -> bool:
        return self.fitted_exponent >= self.target_exponent - 0.3


@dataclass(frozen=True)
class GreenConstants:
    h: float
    g5: float
    g6: float
    g7: float
    g8: float

    def rows(self):
        return [
            {"estimate": "G5", "h": self.h, "C": self.g5},
            {"estimate": "G6", "h": self.h, "C": self.g6},
            {"estimate": "G7", "h": self.h, "C": self.g7},
            {"estimate": "G8", "h": self.h, "C": self.g8},
        ]


@dataclass(frozen=True, eq=False)
class BoundaryKernel:
    mesh: MeridianMesh
    points: np.ndarray       # 被接受的节点索引
    values: np.ndarray       # H 在这些节点上的值
    field: np.ndarray        # 全网格上的 H 节点场
    lower: float             # (G11) 下界常数
    upper: float             # (G11) 上界常数
    grad_lower: float        # (G12)
    grad_upper: float
    rigidity_alpha: float
    rigidity_residual: float


@dataclass(frozen=True, eq=False)
class HalfspaceBubble:
    n: int
    s: float
    radius: float            # 重标度后的截断半径
    mesh: MeridianMesh
    values: np.ndarray
    energy: float
    mu_estimate: float
    decay_exponent: float
    peak: Tuple[float, float]
    scale: float             # 重标度因子 M^{2/(n−2)}


@dataclass(frozen=True, eq=False)
class KelvinImage:
    mesh: MeridianMesh
    values: np.ndarray
    pde_residual: float
    hopf_min: float
    hole_radius: float
    boundary_edges: np.ndarray   # ∂D 上的边


EXPERIMENTS = ("solve", "sweep", "pohozaev", "blowup", "greens", "halfspace", "report", "scan", "export-mesh")


@dataclass(frozen=True)
class ExperimentConfig:
    """一次实验的完整配置；除 domain 外各节为已校验的字典"""

    experiment: str
    domain: DomainSpec
    solver: Dict = field(default_factory=dict)
    sweep: Dict = field(default_factory=dict)
    blowup: Dict = field(default_factory=dict)
    greens: Dict = field(default_factory=dict)
    halfspace: Dict = field(default_factory=dict)
    scan: Dict = field(default_factory=dict)
    report: Dict = field(default_factory=dict)
    out_dir: str = "out"
    threads: int = 1
    seed: int = 0
    timestamps: bool = False

    def identity(self) -> Dict:
        """参与配置哈希的部分：输出目录与线程数不影响结果"""
        return {
            "experiment": self.experiment,
            "domain": asdict(self.domain),
            "solver": self.solver,
            "sweep": self.sweep,
            "blowup": self.blowup,
            "greens": self.greens,
            "halfspace": self.halfspace,
            "scan": self.scan,
            "report": self.report,
            "seed": self.seed,
        }
