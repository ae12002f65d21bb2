"""
Pohozaev 恒等式与曲率比预测

对 Δu + a u = |u|^{q−2}u/|x|^s + f（Δ = −∇²）在 W = Ω ∩ B_r 上：

    [(n−s)/q − (n−2)/2] ∫_W |u|^q/|x|^s − ∫_W (a + (x,∇a)/2) u² − S
        = ½∫_{∂Ω∩B_r} (x,ν)|∇u|² + 球面项

其中 S = ∫_W (x,∇u) f + (n−2)/2 ∫_W u f。体积分用网格求积点中 |x| < r 的部分，
∂Ω 上的梯度取相邻单元的单侧 P1 梯度。
"""

from typing import Callable, Optional
import math

import numpy as np

from core.errors import GeometryError
from core.model import (
    BubbleDecomposition,
    Coefficient,
    CurvatureData,
    EdgeTag,
    MeridianMesh,
    PohozaevReport,
    RatioPrediction,
    sphere_area,
)
from discretize import singular_quadrature
from geometry import boundary_quadrature, cell_gradients, locate, interpolate_at

SPHERE_SAMPLES = 720
ANGULAR_SAMPLES = 32


def _measure(mesh: MeridianMesh, points) -> np.ndarray:
    """边界积分中的 c_n r^{n−2}"""
    return sphere_area(mesh.n - 2) * np.abs(points[:, 1]) ** mesh.weight_exponent


def boundary_gradient_integral(mesh: MeridianMesh, u, region: Optional[float] = None) -> float:
    """
    ½∫_{∂Ω∩B_r} (x,ν)|∇u|²，两点 Gauss，单侧梯度

    Args:
        region: 半径 r；None 表示整个 ∂Ω
    """
    points, normals, weights, cells = boundary_quadrature(mesh)
    grad = cell_gradients(mesh, u)[cells]
    integrand = np.einsum("ij,ij->i", points, normals) * np.einsum("ij,ij->i", grad, grad)
    mask = np.ones(len(points), dtype=bool)
    if region is not None:
        mask = np.linalg.norm(points, axis=1) < region
    return 0.5 * float(np.sum((weights * _measure(mesh, points) * integrand)[mask]))


def flat_face_edges(mesh: MeridianMesh, tol: float = 1e-12) -> np.ndarray:
    """位于 {x₁ = 0} 上、不在外圆弧上的 Dirichlet 边"""
    edges = mesh.dirichlet_edges
    on_arc = mesh.edge_on_arc[np.asarray(mesh.edge_tags) == EdgeTag.DIRICHLET]
    x1 = np.abs(np.asarray(mesh.nodes)[:, 0])
    scale = tol * mesh.spec.radius
    flat = (x1[edges[:, 0]] <= scale) & (x1[edges[:, 1]] <= scale) & ~on_arc
    return edges[flat]


def trace_integral(mesh: MeridianMesh, u, weight: Callable[[np.ndarray], np.ndarray]) -> float:
    """∫_{∂R^n_- ∩ B_R} weight(x)|∇u|² dx，只在平坦面 {x₁ = 0} 上积分"""
    edges = flat_face_edges(mesh)
    if len(edges) == 0:
        raise ValueError("网格没有平坦面 {x₁ = 0}，无法计算迹积分")
    points, _, weights, cells = boundary_quadrature(mesh, edges)
    grad = cell_gradients(mesh, u)[cells]
    values = np.asarray(weight(points), dtype=float) * np.einsum("ij,ij->i", grad, grad)
    return float(np.sum(weights * _measure(mesh, points) * values))


def _sphere_term(mesh: MeridianMesh, u, a: Coefficient, q: float, s: float, r: float) -> float:
    """∂B_r ∩ Ω 上的余项，θ 取中点规则"""
    theta = (np.arange(SPHERE_SAMPLES) + 0.5) * math.pi / SPHERE_SAMPLES
    points = r * np.column_stack([np.cos(theta), np.sin(theta)])
    cells = locate(mesh, points)
    inside = cells >= 0
    if not np.any(inside):
        raise GeometryError(f"半径 r={r} 的球面与网格不相交")
    points, cells, theta = points[inside], cells[inside], theta[inside]
    values, _ = interpolate_at(mesh, u, points)
    grad = cell_gradients(mesh, u)[cells]
    normal = points / r
    dnu = np.einsum("ij,ij->i", grad, normal)
    grad2 = np.einsum("ij,ij->i", grad, grad)
    n = mesh.n
    integrand = (
        r * dnu ** 2
        + 0.5 * (n - 2) * values * dnu
        - 0.5 * r * grad2
        + r * np.abs(values) ** q / (q * r ** s)
        - 0.5 * r * a(points) * values ** 2
    )
    ds = r * math.pi / SPHERE_SAMPLES
    return float(np.sum(integrand * _measure(mesh, points) * ds))


def pohozaev_defect(
    mesh: MeridianMesh,
    u,
    a=0.0,
    p: Optional[float] = None,
    s: Optional[float] = None,
    r: Optional[float] = None,
    source: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> PohozaevReport:
    """
    W = Ω ∩ B_r 上 Pohozaev 恒等式两侧与缺陷

    Args:
        mesh: 子午网格
        u: 节点解
        a: 系数场
        p: 非线性指数 q，缺省 2⋆
        s: 奇异权指数，缺省 mesh.spec.s
        r: 区域半径，缺省 R/2
        source: 方程右端额外的源项 f

    Returns:
        PohozaevReport
    """
    s = mesh.spec.s if s is None else s
    q = mesh.spec.critical_exponent if p is None else p
    r = 0.5 * mesh.spec.radius if r is None else r
    if r <= 0:
        raise ValueError(f"区域半径必须为正，当前为 {r}")
    if mesh.chart is not None and r > mesh.chart.valid_radius:
        raise GeometryError(f"区域半径 {r} 超出边界图的有效半径 {mesh.chart.valid_radius}")
    coefficient = Coefficient.coerce(a)
    u = np.asarray(u, dtype=float)
    n = mesh.n

    quad = singular_quadrature(mesh, s)
    inside = np.linalg.norm(quad.points, axis=1) < r
    uq = quad.interpolate(u)
    grad = cell_gradients(mesh, u)[quad.cells]
    x_grad = np.einsum("ij,ij->i", quad.points, grad)
    aq = coefficient(quad.points)
    a_grad = np.einsum("ij,ij->i", quad.points, coefficient.grad(quad.points))

    nonlinear = float(np.sum((quad.weights_s * np.abs(uq) ** q)[inside]))
    potential = float(np.sum((quad.weights * (aq + 0.5 * a_grad) * uq ** 2)[inside]))
    source_term = 0.0
    if source is not None:
        f = np.asarray(source(quad.points), dtype=float)
        source_term = float(np.sum((quad.weights * (x_grad + 0.5 * (n - 2) * uq) * f)[inside]))

    lhs = ((n - s) / q - 0.5 * (n - 2)) * nonlinear - potential - source_term
    boundary = boundary_gradient_integral(mesh, u, r)
    sphere = _sphere_term(mesh, u, coefficient, q, s, r)
    rhs = boundary + sphere
    return PohozaevReport(
        radius=r,
        lhs_volume=lhs,
        rhs_boundary=rhs,
        defect=lhs - rhs,
        boundary_term=boundary,
        sphere_term=sphere,
        source_term=source_term,
    )


def _tangent_directions(dim: int) -> np.ndarray:
    """切平面单位球面上的求积方向；n−1 = 2 用角向网格，否则用交叉多胞形"""
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        phi = 2 * math.pi * np.arange(ANGULAR_SAMPLES) / ANGULAR_SAMPLES
        return np.column_stack([np.cos(phi), np.sin(phi)])
    eye = np.eye(dim)
    return np.vstack([eye, -eye])


def second_form_weight(curv: CurvatureData) -> Callable[[np.ndarray], np.ndarray]:
    """
    平坦面子午点 (0, r) 上的 II₀(x, x)，在 |x'| = r 的球面上取方向平均

    trace_integral 的测度已包含 c_n r^{n−2}，这里只给出方向平均后的被积权重。
    """
    directions = _tangent_directions(curv.II0.shape[0])

    def weight(points):
        r = np.abs(np.asarray(points, dtype=float)[:, 1])
        x = r[:, None, None] * directions[None, :, :]
        return np.mean(curv.second_form(x), axis=1)

    return weight


def ratio_prediction(
    decomposition: BubbleDecomposition,
    curv: CurvatureData,
    s: Optional[float] = None,
    measured: Optional[float] = None,
) -> RatioPrediction:
    """
    lim p_ε/μ_{ε,N} 的两种表达：一般 II₀ 形式与平均曲率形式

    一般形式直接在剖面网格的平坦面上积分 ∫II₀(x,x)|∇ũ_N|²；
    平均曲率形式用剖面记录的 ∫|x|²|∇ũ_N|² 乘 H(0)/(n−1)。
    两者只在 ũ_N 关于 x' 轴对称时相等，一致性检查落在迹数据和剖面场上。
    """
    if curv is None:
        raise ValueError("缺少曲率数据")
    if decomposition.count == 0 or len(decomposition.profiles) < decomposition.count:
        raise ValueError("缺少气泡剖面或迹数据")
    last = decomposition.profiles[-1]
    n = last.mesh.n
    s = last.mesh.spec.s if s is None else s
    trace_r2 = last.trace_r2
    if not np.isfinite(trace_r2):
        raise ValueError("缺少迹数据 ∫|x|²|∇ũ_N|²")

    alphas = tuple(scale.alpha_measured for scale in decomposition.scales)
    energies = tuple(profile.energy for profile in decomposition.profiles)
    denominator = (n - 2) ** 2 * alphas[-1] ** ((n - 1) * (n - 2) / (2 * (2 - s))) * sum(
        alpha ** (-((n - 2) ** 2) / (2 * (2 - s))) * energy for alpha, energy in zip(alphas, energies)
    )
    integral_II = trace_integral(last.mesh, last.values, second_form_weight(curv))
    general = (n - s) * integral_II / denominator
    mean_curvature = (n - s) * trace_r2 * curv.mean_curvature_trace / ((n - 1) * denominator)
    if measured is None:
        scale = decomposition.scales[-1]
        measured = scale.p_eps / scale.mu
    return RatioPrediction(
        general=general,
        mean_curvature=mean_curvature,
        bubble_energies=energies,
        boundary_integral_II=integral_II,
        boundary_integral_r2=trace_r2,
        alpha_limits=alphas,
        measured=measured,
        asymptotic_only=True,
    )
