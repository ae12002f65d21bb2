"""
格林函数：基本核、参数展开项 Γ_i、离散格林函数与估计常数

极点取在对称轴上，此时 G(x, ·) 关于 x' 轴对称，可以在子午面上表示。
离散格林函数 g = K^{−1} e_pole：对任意 P1 函数 φ 有 φ(pole) = a(g, φ)。
"""

from typing import List, Optional, Sequence, Tuple
import math

import numpy as np
from scipy.special import ellipk

from core.errors import GeometryError
from core.model import (
    BoundaryKernel,
    Coefficient,
    GreenConstants,
    GreenKernel,
    MeridianMesh,
    ParametrixTerm,
    WeightedOperator,
    sphere_area,
)
from discretize import assemble, require_coercive, singular_quadrature, solve_free
from geometry import boundary_distance, cell_geometry, cell_gradients

BUMP_FRACTIONS = (0.5, 0.7, 0.9)
EXCLUDE_H = 3.0
CORNER_H = 2.0


def fundamental_kernel(x, y, n: int) -> np.ndarray:
    """H(x, y) = 1/((n−2) ω_{n−1} |x−y|^{n−2})，点的最后一维为坐标"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dist = np.linalg.norm(x - y, axis=-1)
    if np.any(dist == 0.0):
        raise ValueError("x 与 y 重合，基本核无定义")
    return 1.0 / ((n - 2) * sphere_area(n - 1) * dist ** (n - 2))


def halfspace_green(x, y, n: int) -> np.ndarray:
    """半空间 {x₁ < 0} 的像法格林函数 H(x, y) − H(x*, y)"""
    x = np.asarray(x, dtype=float)
    mirror = x.copy()
    mirror[..., 0] = -mirror[..., 0]
    return fundamental_kernel(x, y, n) - fundamental_kernel(mirror, y, n)


def axis_nodes(mesh: MeridianMesh) -> np.ndarray:
    """对称轴上的自由节点，按到原点的距离排序"""
    nodes = np.asarray(mesh.nodes)
    axis = np.flatnonzero((nodes[:, 1] == 0.0) & np.isin(np.arange(mesh.num_nodes), mesh.free))
    return axis[np.argsort(np.linalg.norm(nodes[axis], axis=1))]


def nearest_axis_node(mesh: MeridianMesh, depth: float) -> int:
    """离 (−depth, 0) 最近的轴节点"""
    axis = axis_nodes(mesh)
    nodes = np.asarray(mesh.nodes)
    return int(axis[np.argmin(np.abs(nodes[axis, 0] + depth))])


# ---------------------------------------------------------------- 参数展开


def _fit_exponent(distances, values) -> float:
    keep = (np.abs(values) > 0) & (distances > 0)
    if np.count_nonzero(keep) < 2:
        return float("inf")
    slope, _ = np.polyfit(np.log(distances[keep]), np.log(np.abs(values[keep])), 1)
    return float(slope)


def _term(order: int, n: int, distances, values) -> ParametrixTerm:
    target = float(2 * order - n) if 2 * order < n else 0.0
    scaled = np.abs(values) / distances ** target
    return ParametrixTerm(
        order=order,
        distances=distances,
        values=values,
        bound_constant=float(np.max(scaled)) if scaled.size else 0.0,
        fitted_exponent=_fit_exponent(distances, values),
        target_exponent=target,
    )


def _gamma2_axis(mesh: MeridianMesh, coefficient: Coefficient, x: int, y: int) -> float:
    """
    轴上两点的 Γ₂(x, y) = ∫ a(z)a(y) H(x,z) H(z,y) dz

    用单位分解 |z−y|^{n−2}/(|z−x|^{n−2} + |z−y|^{n−2}) 把两个奇点分开，
    各自在以该点为中心的 Duffy 规则上积分。
    """
    n = mesh.n
    nodes = np.asarray(mesh.nodes)
    px, py = nodes[x], nodes[y]
    const = coefficient(py[None])[0] / ((n - 2) * sphere_area(n - 1)) ** 2
    total = 0.0
    for center in (x, y):
        quad = singular_quadrature(mesh, s=n - 2.0, center=center, beta=1.0)
        z = quad.points
        dx = np.linalg.norm(z - px, axis=1) ** (n - 2)
        dy = np.linalg.norm(z - py, axis=1) ** (n - 2)
        smooth = coefficient(z) / (dx + dy)
        total += quad.integrate(smooth, singular=True)
    return const * total


def _ring_kernel(points_a, points_b) -> np.ndarray:
    """n = 3 中 ∫_0^{2π} H(w(φ), z) dφ，w 取遍半径 r_w 的圆环"""
    d1 = points_a[:, None, 0] - points_b[None, :, 0]
    rw = points_a[:, None, 1]
    rz = points_b[None, :, 1]
    denom = d1 ** 2 + (rw + rz) ** 2
    m = np.clip(4.0 * rw * rz / denom, 0.0, 1.0 - 1e-15)
    return ellipk(m) / (math.pi * np.sqrt(denom))


def parametrix_terms(a, mesh: MeridianMesh, depth: int, pole: Optional[int] = None) -> List[ParametrixTerm]:
    """
    Γ₁ = −a(y)H(x, y)，Γ_{i+1}(x, y) = ∫ Γ_i(x, z) Γ₁(z, y) dz

    Γ₁ 在自由节点上精确取值；Γ₂ 在轴节点对上用分解后的 Duffy 规则；
    i ≥ 3 只对 n = 3 用形心规则与圆环核（跳过对角）。

    Args:
        a: 系数场
        mesh: 子午网格
        depth: 最高阶数，≤ n
        pole: 轴上的极点 x，缺省取 (−R/2, 0) 附近的轴节点
    """
    n = mesh.n
    if not 1 <= depth <= n:
        raise ValueError(f"depth 必须位于 [1, {n}]，当前为 {depth}")
    if depth >= 3 and n != 3:
        raise ValueError("i ≥ 3 的项只对 n = 3 实现")
    coefficient = Coefficient.coerce(a)
    nodes = np.asarray(mesh.nodes)
    pole = nearest_axis_node(mesh, 0.5 * mesh.spec.radius) if pole is None else int(pole)
    px = nodes[pole]
    window = EXCLUDE_H * mesh.h

    samples = np.setdiff1d(mesh.free, [pole])
    dist = np.linalg.norm(nodes[samples] - px, axis=1)
    keep = dist >= window
    samples, dist = samples[keep], dist[keep]
    values = -coefficient(nodes[samples]) * fundamental_kernel(px, nodes[samples], n)
    terms = [_term(1, n, dist, values)]
    if depth == 1:
        return terms

    axis = np.array([y for y in axis_nodes(mesh) if y != pole and np.linalg.norm(nodes[y] - px) >= window])
    if coefficient.is_constant and float(coefficient.value) == 0.0:
        gamma2 = np.zeros(len(axis))
    else:
        gamma2 = np.array([_gamma2_axis(mesh, coefficient, pole, int(y)) for y in axis])
    terms.append(_term(2, n, np.linalg.norm(nodes[axis] - px, axis=1), gamma2))
    if depth == 2:
        return terms

    cells = np.asarray(mesh.cells)
    area, _ = cell_geometry(nodes, cells)
    centroids = nodes[cells].mean(axis=1)
    weights = np.abs(area) * centroids[:, 1]
    a_c = coefficient(centroids)
    ring = _ring_kernel(centroids, centroids)
    np.fill_diagonal(ring, 0.0)
    current = -a_c * fundamental_kernel(px, centroids, n)
    dist_c = np.linalg.norm(centroids - px, axis=1)
    keep = dist_c >= window
    for order in range(2, depth + 1):
        current = -a_c * ((weights * current) @ ring)
        if order >= 3:
            terms.append(_term(order, n, dist_c[keep], current[keep]))
    return terms


# ---------------------------------------------------------------- 离散格林函数


def _bump_panel(n: int, coefficient: Coefficient, center, delta: float):
    """
    φ(x) = (1 − ρ²/δ²)^4，ρ = |x − center|，以及 (Δ + a)φ

    记 q = ρ²，g(q) = (1 − q/δ²)^4，则 −∇²φ = −(4q g″ + 2n g′)
    """

    def phi(points):
        q = np.sum((points - center) ** 2, axis=1) / delta ** 2
        return np.clip(1.0 - q, 0.0, None) ** 4

    def operator(points):
        q = np.sum((points - center) ** 2, axis=1)
        t = np.clip(1.0 - q / delta ** 2, 0.0, None)
        g1 = -4.0 * t ** 3 / delta ** 2
        g2 = 12.0 * t ** 2 / delta ** 4
        return -(4.0 * q * g2 + 2.0 * n * g1) + coefficient(points) * phi(points)

    return phi, operator


def greens_solve(
    mesh: MeridianMesh, a=0.0, pole: int = None, op: Optional[WeightedOperator] = None
) -> GreenKernel:
    """
    离散格林函数 G(pole, ·) = K^{−1} e_pole

    reproduction_error 为一组鼓包测试函数上 |φ(pole) − ∫G(Δφ + aφ)| 的最大值（φ(pole) = 1）。
    鼓包以极点为中心、关于对称轴旋转对称，只对轴上的极点有定义；
    离轴极点的 reproduction_error 为 NaN，on_axis=False。
    """
    op = assemble(mesh, a) if op is None else op
    require_coercive(op)
    if pole is None:
        raise ValueError("需要指定极点节点")
    pole = int(pole)
    position = np.flatnonzero(op.free == pole)
    if len(position) == 0:
        raise GeometryError(f"极点 {pole} 不是内部节点")
    nodes = np.asarray(mesh.nodes)
    on_axis = bool(nodes[pole, 1] == 0.0)

    rhs = np.zeros(len(op.free))
    rhs[position[0]] = 1.0
    values = op.extend(solve_free(op, rhs))

    error = float("nan")
    if on_axis:
        reach = float(boundary_distance(mesh, nodes[pole][None])[0])
        errors = []
        for fraction in BUMP_FRACTIONS:
            delta = fraction * reach
            if delta < 3.0 * mesh.h:
                continue
            _, applied = _bump_panel(mesh.n, op.coefficient, nodes[pole], delta)
            quad = op.quadrature
            load = quad.load(applied(quad.points), singular=False)
            errors.append(abs(1.0 - float(values @ load)))
        if errors:
            error = max(errors)
    return GreenKernel(
        mesh=mesh,
        pole=pole,
        pole_point=(float(nodes[pole, 0]), float(nodes[pole, 1])),
        values=values,
        reproduction_error=error,
        on_axis=on_axis,
    )


def corner_nodes(mesh: MeridianMesh) -> np.ndarray:
    """外圆弧与其余 Dirichlet 边界相接的节点"""
    dirichlet = np.asarray(mesh.edge_tags) == 2
    arc = mesh.edges[dirichlet & mesh.edge_on_arc]
    rest = mesh.edges[dirichlet & ~mesh.edge_on_arc]
    return np.intersect1d(np.unique(arc), np.unique(rest))


def _far_from_corners(mesh: MeridianMesh, points) -> np.ndarray:
    corners = np.asarray(mesh.nodes)[corner_nodes(mesh)]
    if len(corners) == 0:
        return np.ones(len(points), dtype=bool)
    dist = np.linalg.norm(points[:, None, :] - corners[None, :, :], axis=2)
    return np.min(dist, axis=1) >= CORNER_H * mesh.h


def estimate_constants(kernels: Sequence[GreenKernel]) -> GreenConstants:
    """
    (G5)–(G8) 的经验常数

    G5 = sup |x−y|^{n−2}|G|，G6 = sup |x−y|^{n−1}|G|/d(y)，
    G7 = sup |x−y|^{n−1}|∇G|，G8 = sup |x−y|^n|∇G|/d(x)
    排除 |x−y| < 3h 与距角点 2h 以内的点。
    """
    if not kernels:
        raise ValueError("至少需要一个格林函数")
    g5 = g6 = g7 = g8 = 0.0
    mesh = kernels[0].mesh
    n = mesh.n
    nodes = np.asarray(mesh.nodes)
    free = mesh.free
    d_free = boundary_distance(mesh, nodes[free])
    cells = np.asarray(mesh.cells)
    centroids = nodes[cells].mean(axis=1)
    far_nodes = _far_from_corners(mesh, nodes[free])
    far_cells = _far_from_corners(mesh, centroids)
    for kernel in kernels:
        if kernel.mesh is not mesh:
            raise ValueError("所有格林函数必须定义在同一网格上")
        x = np.array(kernel.pole_point)
        dx = float(boundary_distance(mesh, x[None])[0])
        window = EXCLUDE_H * mesh.h

        dist = np.linalg.norm(nodes[free] - x, axis=1)
        ok = (dist >= window) & far_nodes & (d_free > 0)
        G = np.abs(kernel.values[free])
        if np.any(ok):
            g5 = max(g5, float(np.max(dist[ok] ** (n - 2) * G[ok])))
            g6 = max(g6, float(np.max(dist[ok] ** (n - 1) * G[ok] / d_free[ok])))

        grad = np.linalg.norm(cell_gradients(mesh, kernel.values), axis=1)
        dist_c = np.linalg.norm(centroids - x, axis=1)
        ok_c = (dist_c >= window) & far_cells
        if np.any(ok_c):
            g7 = max(g7, float(np.max(dist_c[ok_c] ** (n - 1) * grad[ok_c])))
            g8 = max(g8, float(np.max(dist_c[ok_c] ** n * grad[ok_c] / dx)))
    return GreenConstants(h=mesh.h, g5=g5, g6=g6, g7=g7, g8=g8)


def boundary_kernel(
    mesh: MeridianMesh, a=0.0, poles: Optional[Tuple[int, int]] = None, op: Optional[WeightedOperator] = None
) -> BoundaryKernel:
    """
    H(x) = −∂_ν G_x(0)

    由对称性 G_x(y) = G_y(x)，取两个靠近 0 的轴节点 t₁ < t₂ 为极点，
    G(x, −t e₁) ≈ H(x) t + c t²，于是 H ≈ (G₁t₂² − G₂t₁²)/(t₁t₂(t₂ − t₁))。
    |x| < 3t₂ 的节点不参与常数拟合。
    """
    op = assemble(mesh, a) if op is None else op
    nodes = np.asarray(mesh.nodes)
    if poles is None:
        axis = axis_nodes(mesh)
        if len(axis) < 3:
            raise GeometryError("轴上的内部节点不足")
        poles = (int(axis[1]), int(axis[2]))
    i1, i2 = poles
    t1, t2 = float(np.linalg.norm(nodes[i1])), float(np.linalg.norm(nodes[i2]))
    if not 0 < t1 < t2:
        raise ValueError("需要 0 < t₁ < t₂")
    G1 = greens_solve(mesh, a, i1, op).values
    G2 = greens_solve(mesh, a, i2, op).values
    field = (G1 * t2 ** 2 - G2 * t1 ** 2) / (t1 * t2 * (t2 - t1))

    n = mesh.n
    norm = np.linalg.norm(nodes, axis=1)
    window = EXCLUDE_H * t2
    accepted = mesh.free[norm[mesh.free] > window]
    accepted = accepted[_far_from_corners(mesh, nodes[accepted])]
    if len(accepted) == 0:
        raise GeometryError("没有离 0 足够远的节点")
    values = field[accepted]
    d = boundary_distance(mesh, nodes[accepted])
    scaled = values * norm[accepted] ** n / d

    cells = np.asarray(mesh.cells)
    centroids = nodes[cells].mean(axis=1)
    cnorm = np.linalg.norm(centroids, axis=1)
    ok = (cnorm > window) & _far_from_corners(mesh, centroids)
    grad = np.linalg.norm(cell_gradients(mesh, field), axis=1)[ok] * cnorm[ok] ** n

    region = (norm[accepted] < 0.25 * mesh.spec.radius)
    if np.count_nonzero(region) >= 2:
        f = np.abs(nodes[accepted][region, 0]) / norm[accepted][region] ** n
        h_region = values[region]
        alpha = float(np.dot(h_region, f) / np.dot(f, f))
        residual = float(np.max(np.abs(h_region - alpha * f)) / np.max(np.abs(h_region)))
    else:
        alpha, residual = float("nan"), float("nan")

    return BoundaryKernel(
        mesh=mesh,
        points=accepted,
        values=values,
        field=field,
        lower=float(np.min(scaled)),
        upper=float(np.max(scaled)),
        grad_lower=float(np.min(grad)) if grad.size else float("nan"),
        grad_upper=float(np.max(grad)) if grad.size else float("nan"),
        rigidity_alpha=alpha,
        rigidity_residual=residual,
    )
