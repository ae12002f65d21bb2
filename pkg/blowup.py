"""
爆破尺度的穷举与气泡分解

工作流程：
1. 由全局最大值得到候选尺度，在 B_{ρ_cut} 内做 (Δ + a)-调和替换，得到弱极限 u₀
2. 贪心循环：在排除区外取加权残差 |x|^{(n−2)/2}|u − u₀|^e 的最大点，
   在其附近取 |u| 的最大节点为中心，安装尺度 μ = |u(中心)|^{−2/(n−2)}
3. 为每个尺度生成重标度剖面 ũ(y) = μ^{(n−2)/2} u(φ(k y))
4. 拟合 C⁰/C¹ 包络常数，检查能量量子化
"""

from dataclasses import replace
from functools import lru_cache
from typing import Optional, Tuple
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from core.errors import GeometryError
from core.model import (
    BoundaryChart,
    BubbleDecomposition,
    BubbleProfile,
    BubbleScale,
    Coefficient,
    DomainSpec,
    EnergyReport,
    MeridianMesh,
    critical_exponent,
)
from discretize import gradient_energy, interpolation_error_estimate, laplace_matrix, singular_quadrature
from geometry import cell_gradients, chart_map, interpolate_at, make_domain
from pohozaev import trace_integral

R_CUT = 20.0
R_EXCL = 10.0
SEPARATION = 4.0
N_MAX = 4
# 候选尺度 k 超过 R 的该比例时不再视为集中
MAX_SCALE_FRACTION = 0.125
PROFILE_RADIUS = 4.0
PROFILE_SAMPLES = 16


def scale_exponent(n: int, s: float, p_eps: float) -> float:
    """e = 1 − p_ε/(2⋆ − 2)"""
    return 1.0 - p_eps / (critical_exponent(n, s) - 2.0)


def make_scale(mu: float, center, p_eps: float, n: int, s: float) -> BubbleScale:
    e = scale_exponent(n, s, p_eps)
    return BubbleScale(
        mu=float(mu),
        k=float(mu) ** e,
        center=(float(center[0]), float(center[1])),
        alpha_measured=float(mu) ** p_eps,
        p_eps=float(p_eps),
        exponent=e,
    )


def _stiffness(mesh: MeridianMesh, a: Coefficient) -> sp.csr_matrix:
    K = laplace_matrix(mesh)
    if a.is_constant and float(a.value) == 0.0:
        return K
    quad = singular_quadrature(mesh)
    return (K + quad.matrix(a(quad.points), singular=False)).tocsr()


def harmonic_replacement(mesh: MeridianMesh, u, radius: float, a=0.0) -> np.ndarray:
    """
    在 B_radius 内把 u 换成 (Δ + a)-调和函数，边界值取 u 自身

    Returns:
        u₀；球外与 u 相同
    """
    u = np.asarray(u, dtype=float)
    coefficient = Coefficient.coerce(a)
    nodes = np.asarray(mesh.nodes)
    inner = np.zeros(mesh.num_nodes, dtype=bool)
    inner[mesh.free] = True
    inner &= np.linalg.norm(nodes, axis=1) < radius
    if not np.any(inner):
        return u.copy()
    K = _stiffness(mesh, coefficient)
    I = np.flatnonzero(inner)
    B = np.flatnonzero(~inner)
    rhs = -(K[I][:, B] @ u[B])
    out = u.copy()
    out[I] = spsolve(K[I][:, I].tocsc(), rhs)
    return out


def _weighted_residual(mesh: MeridianMesh, u, u0, e: float) -> np.ndarray:
    n = mesh.n
    norm = np.linalg.norm(np.asarray(mesh.nodes), axis=1)
    return norm ** ((n - 2) / 2.0) * np.abs(np.asarray(u) - u0) ** e


def extract_scales(
    mesh: MeridianMesh,
    u,
    p_eps: float,
    chart: Optional[BoundaryChart] = None,
    threshold: Optional[float] = None,
    a=0.0,
    separation: float = SEPARATION,
    n_max: int = N_MAX,
    profile_radius: float = PROFILE_RADIUS,
    profiles: bool = True,
    verbose: bool = False,
) -> BubbleDecomposition:
    """
    贪心地穷举爆破尺度

    残差 ω = |x|^{(n−2)/2}|u − u₀|^e 只在已找到尺度的排除区 |x| ≥ R_EXCL·k 之外取上确界，
    不从 u 中减去已装入的气泡模板。

    Args:
        mesh: 子午网格
        u: 收敛解
        p_eps: 间隙 2⋆ − p
        chart: 边界图，缺省取 mesh.chart
        threshold: 停止阈值，缺省为插值误差估计的 10 倍
        a: 系数场，用于调和替换
        separation: 相邻尺度之比的下限
        n_max: 尺度个数上限，达到时 capped=True
        profile_radius: 重标度剖面的截断半径
        profiles: 是否生成重标度剖面

    Returns:
        BubbleDecomposition，尺度按 μ 递增
    """
    if p_eps < 0:
        raise ValueError(f"p_eps 必须 ≥ 0，当前为 {p_eps}")
    u = np.asarray(u, dtype=float)
    chart = mesh.chart if chart is None else chart
    n, s = mesh.n, mesh.spec.s
    R = mesh.spec.radius
    e = scale_exponent(n, s, p_eps)
    nodes = np.asarray(mesh.nodes)
    norm = np.linalg.norm(nodes, axis=1)
    free = np.zeros(mesh.num_nodes, dtype=bool)
    free[mesh.free] = True
    if threshold is None:
        threshold = 10.0 * interpolation_error_estimate(mesh, u)

    peak = float(np.max(np.abs(u))) if u.size else 0.0
    cut_radius = 0.0
    u0 = u.copy()
    if peak > 0:
        k_max = peak ** (-2.0 * e / (n - 2))
        if k_max <= MAX_SCALE_FRACTION * R:
            cut_radius = min(R_CUT * k_max, 0.5 * R)
            u0 = harmonic_replacement(mesh, u, cut_radius, a)
    omega = _weighted_residual(mesh, u, u0, e)

    scales = []
    exclusion = 0.0
    capped = False
    residual_sup = 0.0
    while True:
        active = free & (norm >= exclusion)
        if not np.any(active):
            residual_sup = 0.0
            break
        residual_sup = float(np.max(omega[active]))
        if residual_sup <= threshold:
            break
        if len(scales) >= n_max:
            capped = True
            print(f"[警告] 尺度个数达到上限 {n_max}，残差 {residual_sup:.3e}")
            break
        star = np.flatnonzero(active)[int(np.argmax(omega[active]))]
        near = np.flatnonzero(active & (norm <= 2.0 * norm[star]))
        center = near[int(np.argmax(np.abs(u[near])))]
        value = abs(u[center])
        if value == 0.0:
            break
        mu = value ** (-2.0 / (n - 2))
        candidate = make_scale(mu, nodes[center], p_eps, n, s)
        if candidate.k > MAX_SCALE_FRACTION * R:
            if verbose:
                print(f"[爆破] 候选尺度 k={candidate.k:.3g} 不再集中，停止")
            break
        if scales and mu < separation * scales[-1].mu:
            # 与上一个气泡合并：排除区推过该峰
            exclusion = max(exclusion, 2.0 * norm[star]) * (1.0 + 1e-12)
            if verbose:
                print(f"[爆破] μ={mu:.3e} 与 μ={scales[-1].mu:.3e} 间隔不足，合并")
            continue
        scales.append(candidate)
        exclusion = max(R_EXCL * candidate.k, 2.0 * norm[center], exclusion * (1.0 + 1e-12))
        if verbose:
            print(
                f"[爆破] 第 {len(scales)} 个尺度: μ={mu:.4e} k={candidate.k:.4e} "
                f"中心=({nodes[center][0]:.3e}, {nodes[center][1]:.3e})"
            )

    built = ()
    if profiles and scales:
        built = tuple(
            rescaled_profile(mesh, u, scale, chart, profile_radius) for scale in scales
        )
    decomposition = BubbleDecomposition(
        scales=tuple(scales),
        weak_limit=u0,
        profiles=built,
        residual_sup=residual_sup,
        threshold=float(threshold),
        capped=capped,
        cut_radius=cut_radius,
    )
    C_co, C_c1 = envelope_fit(mesh, u, decomposition)
    return replace(decomposition, C_co=C_co, C_c1=C_c1)


@lru_cache(maxsize=8)
def profile_mesh(n: int, s: float, radius: float = PROFILE_RADIUS, samples: int = PROFILE_SAMPLES) -> MeridianMesh:
    """重标度剖面所在的平坦半球网格"""
    spec = DomainSpec(n=n, s=s, family="perturbed-half-ball", kappa=0.0, radius=radius, meridian_samples=samples)
    mesh, _, _ = make_domain(spec)
    return mesh


def rescaled_profile(
    mesh: MeridianMesh,
    u,
    scale: BubbleScale,
    chart: Optional[BoundaryChart] = None,
    R: float = PROFILE_RADIUS,
    samples: int = PROFILE_SAMPLES,
) -> BubbleProfile:
    """
    ũ(y) = μ^{(n−2)/2} u(φ(k y))，y ∈ B_R ∩ {y₁ ≤ 0}

    落在区域外的点按 0 处理，比例记在 outside_fraction 中；
    R·k 超出边界图的有效半径时抛出 GeometryError。
    """
    chart = mesh.chart if chart is None else chart
    if chart is not None and R * scale.k >= chart.valid_radius:
        raise GeometryError(f"R·k = {R * scale.k:.3g} 超出边界图的有效半径 {chart.valid_radius}")
    target = profile_mesh(mesh.n, mesh.spec.s, R, samples)
    y = np.asarray(target.nodes)
    x = chart_map(chart, scale.k * y)
    values, inside = interpolate_at(mesh, u, x)
    values = scale.mu ** ((mesh.n - 2) / 2.0) * values
    return BubbleProfile(
        mesh=target,
        values=values,
        energy=gradient_energy(target, values),
        trace_r2=trace_integral(target, values, lambda p: np.sum(p ** 2, axis=1)),
        outside_fraction=float(np.mean(~inside)),
    )


def envelope_fit(mesh: MeridianMesh, u, decomposition: BubbleDecomposition) -> Tuple[float, float]:
    """
    C⁰ 与 C¹ 包络常数

    C_co = max |u| / (Σ μ^{n/2}|x|/(μ²+|x|²)^{n/2} + |x|)
    C_c1 = max |∇u| / (Σ μ^{n/2}/(μ²+|x|²)^{n/2} + 1)，梯度取单元形心处
    """
    u = np.asarray(u, dtype=float)
    n = mesh.n
    nodes = np.asarray(mesh.nodes)
    norm = np.linalg.norm(nodes, axis=1)
    keep = norm > 0
    mus = np.array([scale.mu for scale in decomposition.scales])

    def bubbles(dist, with_x: bool):
        if mus.size == 0:
            return np.zeros_like(dist)
        numerator = mus[None, :] ** (n / 2.0) * (dist[:, None] if with_x else 1.0)
        return np.sum(numerator / (mus[None, :] ** 2 + dist[:, None] ** 2) ** (n / 2.0), axis=1)

    envelope = bubbles(norm[keep], True) + norm[keep]
    C_co = float(np.max(np.abs(u[keep]) / envelope)) if np.any(keep) else 0.0

    cells = np.asarray(mesh.cells)
    centroid_norm = np.linalg.norm(nodes[cells].mean(axis=1), axis=1)
    grad = np.linalg.norm(cell_gradients(mesh, u), axis=1)
    C_c1 = float(np.max(grad / (bubbles(centroid_norm, False) + 1.0)))
    return C_co, C_c1


def energy_quantization(
    mesh: MeridianMesh,
    u,
    decomposition: BubbleDecomposition,
    mu_half: float,
    tol: float = 0.02,
) -> EnergyReport:
    """
    能量量子化检查

    gap = |∫|∇u|² − ∫|∇u₀|² − Σ ∫|∇ũ_i|²|；每个气泡能量应 ≥ μ_half^{2⋆/(2⋆−2)}(1 − tol)；
    气泡个数应 ≤ Λ² μ_half^{−2⋆/(2⋆−2)} + 1，Λ² 取 ∫|∇u|²。
    """
    if mu_half <= 0:
        raise ValueError("mu_half 必须为正")
    pc = mesh.spec.critical_exponent
    power = pc / (pc - 2.0)
    total = gradient_energy(mesh, u)
    weak = gradient_energy(mesh, decomposition.weak_limit)
    bubbles = tuple(profile.energy for profile in decomposition.profiles)
    gap = abs(total - weak - sum(bubbles))
    lower = mu_half ** power * (1.0 - tol)
    count_bound = total * mu_half ** (-power) + 1.0
    return EnergyReport(
        total=total,
        weak_limit=weak,
        bubbles=bubbles,
        gap=gap,
        lower_bound=lower,
        each_above_bound=all(b >= lower for b in bubbles),
        count_bound=count_bound,
        count_ok=decomposition.count <= count_bound,
    )


def bubble_template(points, mu: float, k: float, n: int) -> np.ndarray:
    """
    合成气泡 μ^{−(n−2)/2} T(x/k)，T(y) = c|y₁|/(1+|y|²)^{n/2}

    c 使 max T = 1，最大点在 y' = 0、|y₁| = 1/√(n−1)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    t = 1.0 / math.sqrt(n - 1.0)
    c = (1.0 + t ** 2) ** (n / 2.0) / t
    y = points / k
    T = c * np.abs(y[:, 0]) / (1.0 + np.sum(y ** 2, axis=1)) ** (n / 2.0)
    return mu ** (-(n - 2) / 2.0) * T


def plant_bubble(mesh: MeridianMesh, mu: float, target_radius: float) -> Tuple[np.ndarray, float, int]:
    """
    在最接近 target_radius 的轴节点处种下合成气泡的峰

    Returns:
        (节点场, 使用的 k, 峰所在节点)
    """
    nodes = np.asarray(mesh.nodes)
    axis = np.flatnonzero((nodes[:, 1] == 0.0) & (nodes[:, 0] < 0.0))
    node = axis[int(np.argmin(np.abs(-nodes[axis, 0] - target_radius)))]
    n = mesh.n
    k = math.sqrt(n - 1.0) * abs(nodes[node, 0])
    values = bubble_template(nodes, mu, k, n)
    values[mesh.dirichlet] = 0.0
    return values, k, int(node)
