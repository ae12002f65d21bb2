"""
半空间极限问题与 Kelvin 变换

solve_halfspace 在截断的平坦半球 {|y| ≤ R, y₁ ≤ 0} 上求 Δũ = ũ^{2⋆−1}/|y|^s 的正极小元，
再按 M = max w 重标度使 max ũ = 1。

kelvin_transform 用 y = e₁ + x/|x|² 把半空间映到球 D = B_{1/2}(−e₁/2)：
v(x) = |x|^{2−n} ũ(y)，满足 Δv = v^{2⋆−1}/(|x|^s |x + e₁|^s)。
像网格由气泡网格的节点逐点反演得到，截断球面 |y| = R 的像是 0 附近的小洞。
"""

from dataclasses import replace
from typing import Callable, Optional, Tuple
import math

import numpy as np
from scipy.sparse.linalg import splu

from core.errors import ConvergenceError, GeometryError, InvariantViolation
from core.model import (
    DomainSpec,
    EdgeTag,
    HalfspaceBubble,
    KelvinImage,
    MeridianMesh,
    SubcriticalProblem,
)
from discretize import gradient_energy, interpolation_error_estimate, laplace_matrix, singular_quadrature
from geometry import (
    boundary_quadrature,
    cell_gradients,
    interpolate_at,
    make_domain,
    max_edge_length,
    orient_cells,
    scale_mesh,
)
from solver import minimize_quotient

MIN_RADIUS = 10.0
DECAY_SLACK = 0.3
DECAY_BINS = 12
HOPF_EXCLUDE_H = 3.0
E1 = np.array([1.0, 0.0])


def _decay_exponent(mesh: MeridianMesh, values, inner: float, outer: float) -> float:
    """|y| ∈ [inner, outer] 上按对数分箱取包络，再拟合 log ũ ~ e log|y|"""
    if outer <= inner:
        return float("nan")
    norm = np.linalg.norm(np.asarray(mesh.nodes), axis=1)
    edges = np.geomspace(inner, outer, DECAY_BINS + 1)
    radii, peaks = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (norm >= lo) & (norm < hi) & (values > 0)
        if np.any(mask):
            radii.append(math.sqrt(lo * hi))
            peaks.append(float(np.max(values[mask])))
    if len(radii) < 3:
        return float("nan")
    slope, _ = np.polyfit(np.log(radii), np.log(peaks), 1)
    return float(slope)


def decay_ok(bubble: HalfspaceBubble) -> bool:
    """衰减指数 ≤ −(n−1) + 0.3"""
    e = bubble.decay_exponent
    return bool(np.isfinite(e) and e <= -(bubble.n - 1) + DECAY_SLACK)


def solve_halfspace(
    n: int = 3,
    s: float = 1.0,
    R: float = MIN_RADIUS,
    samples: int = 24,
    h_min: Optional[float] = None,
    verbose: bool = False,
) -> HalfspaceBubble:
    """
    截断半球上的半空间气泡

    Args:
        n: 维数
        s: 奇异权指数
        R: 截断半径，≥ 10
        samples: 子午线采样数
        h_min: 原点附近的最小网格尺寸
        verbose: 打印求解信息

    Returns:
        HalfspaceBubble；mu_estimate 是 μ_s(R^n_-) 的上界估计
    """
    if R < MIN_RADIUS:
        raise ValueError(f"截断半径 R 必须 ≥ {MIN_RADIUS}，当前为 {R}")
    spec = DomainSpec(
        n=n, s=s, family="perturbed-half-ball", kappa=0.0, radius=R, meridian_samples=samples, h_min=h_min
    )
    mesh, _, _ = make_domain(spec, verbose=verbose)
    problem = SubcriticalProblem(mesh=mesh, s=s, p=spec.critical_exponent)
    result = minimize_quotient(problem, verbose=verbose)
    if not result.converged:
        raise ConvergenceError(
            f"半空间问题未收敛 (残差 {result.residual:.3e})", best=result.solution, iterations=result.iterations
        )

    w = np.asarray(result.solution)
    peak_value = float(np.max(w))
    scale = peak_value ** (2.0 / (n - 2))
    target = scale_mesh(mesh, scale)
    values = w / peak_value
    if np.any(values[mesh.free] <= 0):
        print(f"[警告] 半空间气泡在 {np.count_nonzero(values[mesh.free] <= 0)} 个内部节点上非正")

    R_eff = R * scale
    nodes = np.asarray(target.nodes)
    peak = nodes[int(np.argmax(values))]
    bubble = HalfspaceBubble(
        n=n,
        s=s,
        radius=R_eff,
        mesh=target,
        values=values,
        energy=gradient_energy(target, values),
        mu_estimate=result.mu,
        decay_exponent=_decay_exponent(target, values, 2.0, 0.5 * R_eff),
        peak=(float(peak[0]), float(peak[1])),
        scale=scale,
    )
    if verbose:
        print(
            f"[半空间] n={n} s={s} R={R}: μ ≈ {bubble.mu_estimate:.8g}, 能量 {bubble.energy:.8g}, "
            f"衰减指数 {bubble.decay_exponent:.3f}, 峰值位于 ({peak[0]:.3g}, {peak[1]:.3g})"
        )
    return bubble


# ---------------------------------------------------------------- Kelvin 变换


def inverse_point(y) -> np.ndarray:
    """x = (y − e₁)/|y − e₁|²"""
    d = np.atleast_2d(np.asarray(y, dtype=float)) - E1
    return d / np.sum(d ** 2, axis=1)[:, None]


def _boundary_sets(mesh: MeridianMesh):
    dirichlet = np.asarray(mesh.edge_tags) == EdgeTag.DIRICHLET
    on_arc = np.asarray(mesh.edge_on_arc)
    return mesh.edges[dirichlet & ~on_arc], mesh.edges[dirichlet & on_arc]


def _pde_residual(image: MeridianMesh, values, s: float) -> float:
    """Δv − v^{2⋆−1}/(|x|^s|x+e₁|^s) 的相对对偶范数；v ≡ 0 时为 0"""
    free = image.free
    v = np.asarray(values, dtype=float)
    if not np.any(v[free]):
        return 0.0
    p = image.spec.critical_exponent
    L = laplace_matrix(image)
    quad = singular_quadrature(image, s, extra_weight=lambda pts: np.linalg.norm(pts, axis=1) ** (-s))
    vq = quad.interpolate(v)
    load = quad.load(np.abs(vq) ** (p - 2) * vq, singular=True)
    r = (L @ v - load)[free]
    K = L[free][:, free].tocsc()
    lu = splu(K)
    energy = float(v[free] @ (K @ v[free]))
    return math.sqrt(max(float(r @ lu.solve(r)), 0.0)) / math.sqrt(max(energy, 1e-300))


def _hopf_minimum(image: MeridianMesh, values, boundary, exclude: float) -> float:
    points, normals, _, cells = boundary_quadrature(image, boundary)
    grad = cell_gradients(image, values)[cells]
    dnu = np.einsum("ij,ij->i", grad, normals)
    keep = np.linalg.norm(points, axis=1) > exclude
    if not np.any(keep):
        return float("nan")
    return float(np.min(-dnu[keep]))


def kelvin_transform(bubble: HalfspaceBubble, check_decay: bool = True, verbose: bool = False) -> KelvinImage:
    """
    v(x) = |x|^{2−n} ũ(e₁ + x/|x|²) 在 D = B_{1/2}(−e₁/2) 上

    Args:
        bubble: 半空间气泡
        check_decay: 要求气泡衰减拟合通过
        verbose: 打印统计

    Returns:
        KelvinImage
    """
    if check_decay and not decay_ok(bubble):
        raise InvariantViolation(f"气泡衰减指数 {bubble.decay_exponent:.3f} 未通过检查，不能做 Kelvin 变换")
    mesh = bubble.mesh
    n = bubble.n
    x = inverse_point(mesh.nodes)
    norm = np.linalg.norm(x, axis=1)
    values = norm ** (2.0 - n) * np.asarray(bubble.values, dtype=float)
    cells = orient_cells(x, np.asarray(mesh.cells))
    image = replace(mesh, nodes=x, ref_nodes=x, cells=cells, h=max_edge_length(x, cells), chart=None)

    boundary, rim = _boundary_sets(image)
    rim_nodes = np.unique(rim)
    hole_radius = float(np.max(norm[rim_nodes])) if len(rim_nodes) else 0.0
    touching = np.any(np.isin(cells, rim_nodes), axis=1)
    h_rim = max_edge_length(x, cells[touching]) if np.any(touching) else image.h
    residual = _pde_residual(image, values, bubble.s)
    hopf_min = _hopf_minimum(image, values, boundary, hole_radius + HOPF_EXCLUDE_H * h_rim)
    if verbose:
        print(
            f"[半空间] Kelvin 像: {image.num_nodes} 节点, 洞半径 {hole_radius:.3e}, "
            f"残差 {residual:.3e}, min(−∂v/∂ν) = {hopf_min:.4g}"
        )
    return KelvinImage(
        mesh=image,
        values=values,
        pde_residual=residual,
        hopf_min=hopf_min,
        hole_radius=hole_radius,
        boundary_edges=boundary,
    )


def hopf_check(image: KelvinImage, tol: float = 1e-8) -> Tuple[bool, float]:
    """∂D 上（0 附近除外）−∂v/∂ν > tol"""
    value = image.hopf_min
    return bool(np.isfinite(value) and value > tol), value


def origin_slope(image: KelvinImage, radius: float = 0.1) -> float:
    """0 附近 v(x) ≤ C|x| 的常数 C = max v/|x|，取 |x| < radius 的节点"""
    norm = np.linalg.norm(np.asarray(image.mesh.nodes), axis=1)
    mask = norm < radius
    if not np.any(mask):
        raise GeometryError(f"|x| < {radius} 内没有节点")
    return float(np.max(image.values[mask] / norm[mask]))


def lift(image: KelvinImage) -> Callable[[np.ndarray], np.ndarray]:
    """子午面上的场提升为 R^n 上的轴对称函数，点的最后一维为坐标"""

    def field(points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        meridian = np.column_stack([points[:, 0], np.linalg.norm(points[:, 1:], axis=1)])
        values, _ = interpolate_at(image.mesh, image.values, meridian)
        return values

    return field


def reflection_symmetry_check(
    image: KelvinImage,
    field: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    points=None,
    angles: int = 64,
) -> float:
    """
    x_n ↦ −x_n 反射下的最大偏差 ½ max|f(x) − f(x̄)|

    Args:
        image: Kelvin 像
        field: R^n 上的函数，缺省为 image 的轴对称提升
        points: 子午面采样点 (x₁, r)，缺省为像网格的节点
        angles: 最后两个坐标平面内的角度采样数
    """
    n = image.mesh.n
    field = lift(image) if field is None else field
    meridian = np.asarray(image.mesh.nodes) if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    phi = (np.arange(angles) + 0.5) * 2.0 * math.pi / angles
    x1 = np.repeat(meridian[:, 0], angles)
    r = np.repeat(meridian[:, 1], angles)
    phi = np.tile(phi, len(meridian))
    X = np.zeros((len(x1), n))
    X[:, 0] = x1
    X[:, n - 2] = r * np.cos(phi)
    X[:, n - 1] = r * np.sin(phi)
    mirror = X.copy()
    mirror[:, n - 1] = -mirror[:, n - 1]
    return 0.5 * float(np.max(np.abs(np.asarray(field(X)) - np.asarray(field(mirror)))))


def kelvin_round_trip(bubble: HalfspaceBubble, image: KelvinImage, inner_fraction: float = 0.5) -> Tuple[float, float]:
    """
    在气泡网格的单元形心上比较 ũ(y) 与 |y − e₁|^{2−n} v(x(y))

    只取 |y| ≤ inner_fraction·R 且落在像网格内的点。

    Returns:
        (最大偏差, 2 倍插值误差估计)
    """
    mesh = bubble.mesh
    n = bubble.n
    nodes = np.asarray(mesh.nodes)
    centroids = nodes[np.asarray(mesh.cells)].mean(axis=1)
    centroids = centroids[np.linalg.norm(centroids, axis=1) <= inner_fraction * bubble.radius]
    direct, _ = interpolate_at(mesh, bubble.values, centroids)
    x = inverse_point(centroids)
    pulled, inside = interpolate_at(image.mesh, image.values, x)
    factor = np.linalg.norm(centroids - E1, axis=1) ** (2.0 - n)
    deviation = float(np.max(np.abs(direct - factor * pulled)[inside])) if np.any(inside) else 0.0
    bound = 2.0 * (
        interpolation_error_estimate(mesh, bubble.values) + interpolation_error_estimate(image.mesh, image.values)
    )
    return deviation, bound
