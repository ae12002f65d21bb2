"""
加权双线性形式与奇异权积分

P1 元，子午面体积元 c_n r^{n−2} dx₁ dr。
与奇异中心（缺省为原点）相邻的单元使用顶点 Duffy 变换：
径向 Gauss–Jacobi 吸收 t^β，角向 Gauss–Legendre；其余单元用 6 点 4 阶规则。
"""

from functools import lru_cache
from typing import Callable, Optional
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, splu
from scipy.special import roots_jacobi, roots_legendre

from core.errors import CoercivityError
from core.model import (
    Coefficient,
    MeridianMesh,
    SingularQuadrature,
    WeightedOperator,
    sphere_area,
)
from geometry import cell_edges, cell_geometry

# 小于该规模时直接做稠密广义特征分解
DENSE_LIMIT = 1500
T_POINTS = 8
TAU_POINTS = 16

# 6 点 4 阶规则：(权重, 重心坐标)，权重之和为 1
_TRIANGLE_RULE = (
    (0.223381589678011, (0.108103018168070, 0.445948490915965, 0.445948490915965)),
    (0.109951743655322, (0.816847572980459, 0.091576213509771, 0.091576213509771)),
)


def _triangle_rule():
    bary, weights = [], []
    for w, (a, b, c) in _TRIANGLE_RULE:
        for perm in ((a, b, c), (b, c, a), (c, a, b)):
            bary.append(perm)
            weights.append(w)
    return np.array(bary), np.array(weights)


def vertex_duffy_rule(
    triangle, vertex: int, beta: float, t_points: int = T_POINTS, tau_points: int = TAU_POINTS
):
    """
    以三角形的一个顶点为奇点的 Duffy 规则

    x = v + t(A + τ(B − A))，dx = 2|T| t dt dτ。
    对形如 t^{β−1}·光滑 的被积函数精确到 Jacobi 规则的阶。

    Args:
        triangle: (3, 2) 顶点坐标
        vertex: 奇异顶点的局部编号
        beta: t 方向的 Jacobi 指数，须 > −1

    Returns:
        (points (Q, 2), bary (Q, 3), weights (Q,))
    """
    if beta <= -1:
        raise ValueError(f"beta 必须 > −1，当前为 {beta}")
    triangle = np.asarray(triangle, dtype=float)
    ia, ib = (vertex + 1) % 3, (vertex + 2) % 3
    v, a, b = triangle[vertex], triangle[ia], triangle[ib]
    area = 0.5 * abs((a - v)[0] * (b - v)[1] - (a - v)[1] * (b - v)[0])

    xj, wj = roots_jacobi(t_points, 0.0, beta)
    t = 0.5 * (1.0 + xj)
    wt = wj / 2.0 ** (beta + 1.0) * t ** (1.0 - beta)
    xl, wl = roots_legendre(tau_points)
    tau = 0.5 * (1.0 + xl)
    wtau = 0.5 * wl

    T, TAU = np.meshgrid(t, tau, indexing="ij")
    W = 2.0 * area * np.outer(wt, wtau)
    T, TAU, W = T.ravel(), TAU.ravel(), W.ravel()

    bary = np.zeros((len(T), 3))
    bary[:, vertex] = 1.0 - T
    bary[:, ia] = T * (1.0 - TAU)
    bary[:, ib] = T * TAU
    points = bary @ triangle
    return points, bary, W


@lru_cache(maxsize=32)
def _base_rule(mesh: MeridianMesh, center: int, beta: float):
    """不含 |x − c|^{−s} 的求积点与 c_n r^{n−2} 权"""
    nodes = np.asarray(mesh.nodes)
    cells = np.asarray(mesh.cells)
    area, _ = cell_geometry(nodes, cells)
    touching = np.any(cells == center, axis=1)

    bary0, w0 = _triangle_rule()
    regular = np.flatnonzero(~touching)
    pts_cells = [np.repeat(regular, len(w0))]
    pts_bary = [np.tile(bary0, (len(regular), 1))]
    pts_w = [np.outer(np.abs(area[regular]), w0).ravel()]

    for m in np.flatnonzero(touching):
        local = int(np.flatnonzero(cells[m] == center)[0])
        _, bary, w = vertex_duffy_rule(nodes[cells[m]], local, beta)
        pts_cells.append(np.full(len(w), m))
        pts_bary.append(bary)
        pts_w.append(w)

    q_cells = np.concatenate(pts_cells)
    bary = np.vstack(pts_bary)
    cell_nodes = cells[q_cells]
    points = np.einsum("qi,qik->qk", bary, nodes[cell_nodes])
    weight = sphere_area(mesh.n - 2) * np.abs(points[:, 1]) ** mesh.weight_exponent
    return points, q_cells, cell_nodes, bary, np.concatenate(pts_w) * weight


def singular_quadrature(
    mesh: MeridianMesh,
    s: Optional[float] = None,
    center: Optional[int] = None,
    beta: Optional[float] = None,
    extra_weight: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SingularQuadrature:
    """
    构造网格上的求积规则

    Args:
        mesh: 子午网格
        s: 奇异权指数，缺省取 mesh.spec.s
        center: 奇异中心的节点编号，缺省为原点
        beta: 覆盖 Jacobi 指数；缺省为 1 − s（中心在轴上再加 n − 2）
        extra_weight: 乘到 weights_s 上的额外权函数

    Returns:
        SingularQuadrature
    """
    s = mesh.spec.s if s is None else float(s)
    center = mesh.origin if center is None else int(center)
    on_axis = mesh.nodes[center, 1] == 0.0
    if beta is None:
        beta = 1.0 - s + (mesh.weight_exponent if on_axis else 0.0)
    points, q_cells, cell_nodes, bary, weights = _base_rule(mesh, center, float(beta))

    dist = np.linalg.norm(points - np.asarray(mesh.nodes)[center], axis=1)
    weights_s = weights * dist ** (-s) if s else weights.copy()
    if extra_weight is not None:
        weights_s = weights_s * np.asarray(extra_weight(points), dtype=float)
    return SingularQuadrature(
        points=points,
        cells=q_cells,
        cell_nodes=cell_nodes,
        bary=bary,
        weights=weights,
        weights_s=weights_s,
        s=s,
        num_nodes=mesh.num_nodes,
    )


@lru_cache(maxsize=32)
def laplace_matrix(mesh: MeridianMesh) -> sp.csr_matrix:
    """∫ ∇φ_i·∇φ_j c_n r^{n−2}，全部节点"""
    quad = singular_quadrature(mesh, s=0.0)
    cells = np.asarray(mesh.cells)
    _, grads = cell_geometry(mesh.nodes, cells)
    volume = np.bincount(quad.cells, weights=quad.weights, minlength=len(cells))
    local = volume[:, None, None] * np.einsum("mik,mjk->mij", grads, grads)
    rows = np.repeat(cells[:, :, None], 3, axis=2)
    cols = np.repeat(cells[:, None, :], 3, axis=1)
    n = mesh.num_nodes
    A = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    return _symmetrize(A)


def _symmetrize(A) -> sp.csr_matrix:
    return (0.5 * (A + A.T)).tocsr()


def assemble(
    mesh: MeridianMesh, a=0.0, s: Optional[float] = None, verbose: bool = False
) -> WeightedOperator:
    """
    组装 Δ + a 的离散算子

    Args:
        mesh: 子午网格
        a: 常数、可调用对象或 Coefficient
        s: 奇异权指数，缺省取 mesh.spec.s
        verbose: 打印组装统计

    Returns:
        WeightedOperator；Δ + a 不强制时 coercive=False，只打印警告
    """
    coefficient = Coefficient.coerce(a)
    quad = singular_quadrature(mesh, s)
    laplace = laplace_matrix(mesh)
    mass = _symmetrize(quad.matrix(singular=False))
    if coefficient.is_constant and float(coefficient.value) == 0.0:
        a_mass = sp.csr_matrix(mass.shape)
    else:
        a_mass = _symmetrize(quad.matrix(coefficient(quad.points), singular=False))
    stiffness = (laplace + a_mass).tocsr()
    free = mesh.free
    lumped = np.asarray(mass.sum(axis=1)).ravel()

    K = stiffness[free][:, free].tocsc()
    M = mass[free][:, free].tocsc()
    lambda_min = float(lowest_eigenpairs(K, M, 1)[0][0])
    coercive = lambda_min > 0.0
    if verbose:
        print(
            f"[组装] {mesh.num_nodes} 节点 ({len(free)} 自由), "
            f"{len(quad.weights)} 求积点, λ_min = {lambda_min:.6g}"
        )
    if not coercive:
        print(f"[警告] Δ + a 不强制：最小特征值 {lambda_min:.6g} ≤ 0")

    return WeightedOperator(
        mesh=mesh,
        coefficient=coefficient,
        laplace=laplace,
        mass=mass,
        a_mass=a_mass,
        stiffness=stiffness,
        free=free,
        lumped_mass=lumped,
        quadrature=quad,
        coercive=coercive,
        lambda_min=lambda_min,
    )


def require_coercive(op: WeightedOperator) -> None:
    if not op.coercive:
        raise CoercivityError(f"Δ + a 不强制 (λ_min = {op.lambda_min:.6g})")


def lowest_eigenpairs(A, B, k: int = 1, sigma: Optional[float] = None, seed: int = 0):
    """
    广义特征问题 A x = λ B x 的 k 个最小特征对

    规模不超过 DENSE_LIMIT 时用稠密 eigh；否则用移位求逆的 eigsh，
    sigma 缺省取集中质量下 Gershgorin 下界再减去余量。

    Returns:
        (eigenvalues 升序 (k,), eigenvectors (N, k))
    """
    N = A.shape[0]
    if k < 1 or k > N:
        raise ValueError(f"k 必须位于 [1, {N}]，当前为 {k}")
    if N <= DENSE_LIMIT or k >= N - 1:
        dense_a = A.toarray() if sp.issparse(A) else np.asarray(A)
        dense_b = B.toarray() if sp.issparse(B) else np.asarray(B)
        values, vectors = scipy.linalg.eigh(dense_a, dense_b, subset_by_index=[0, k - 1])
        return values, vectors

    A = sp.csc_matrix(A)
    B = sp.csc_matrix(B)
    if sigma is None:
        diag = A.diagonal()
        offdiag = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
        lumped = np.asarray(B.sum(axis=1)).ravel()
        bound = float(np.min((diag - offdiag) / lumped))
        sigma = bound - 0.1 * abs(bound) - 1.0
    lu = splu((A - sigma * B).tocsc())
    op_inv = LinearOperator(matvec=lu.solve, shape=A.shape, dtype=A.dtype)
    v0 = np.random.default_rng(seed).standard_normal(N)
    values, vectors = eigsh(A, k, M=B, sigma=sigma, which="LM", OPinv=op_inv, v0=v0)
    order = np.argsort(values)
    return values[order], vectors[:, order]


def factor(op: WeightedOperator):
    """自由节点刚度矩阵的 LU 分解，缓存在 op.cache 中"""
    lu = op.cache.get("lu")
    if lu is None:
        lu = splu(op.restrict(op.stiffness))
        op.cache["lu"] = lu
    return lu


def solve_free(op: WeightedOperator, rhs_free) -> np.ndarray:
    return factor(op).solve(np.asarray(rhs_free, dtype=float))


def dual_norm(op: WeightedOperator, residual_free) -> float:
    """‖r‖_{K^{−1}} = sqrt(rᵀ K^{−1} r)"""
    r = np.asarray(residual_free, dtype=float)
    return math.sqrt(max(float(r @ solve_free(op, r)), 0.0))


def hs_integral(mesh: MeridianMesh, u, p: float, s: Optional[float] = None) -> float:
    """∫_Ω |u|^p |x|^{−s}，P1 插值在求积点上取值"""
    if p < 1:
        raise ValueError(f"p 必须 ≥ 1，当前为 {p}")
    s = mesh.spec.s if s is None else s
    if not 0.0 <= s < 2.0:
        raise ValueError(f"s 必须位于 [0, 2)，当前为 {s}")
    quad = singular_quadrature(mesh, s)
    values = np.abs(quad.interpolate(u)) ** p
    return max(quad.integrate(values, singular=True), 0.0)


def gradient_energy(mesh: MeridianMesh, u) -> float:
    """∫|∇u|² c_n r^{n−2}"""
    u = np.asarray(u, dtype=float)
    return max(float(u @ (laplace_matrix(mesh) @ u)), 0.0)


def hs_quotient(mesh: MeridianMesh, u, p: float, s: Optional[float] = None, a=None) -> float:
    """
    Hardy–Sobolev 商 (∫|∇u|² + ∫a u²) / (∫|u|^p/|x|^s)^{2/p}

    对 u ↦ cu 不变；u ≡ 0 时抛出 ValueError
    """
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ValueError("u ≡ 0 时商无定义")
    denominator = hs_integral(mesh, u, p, s)
    if denominator <= 0.0:
        raise ValueError("∫|u|^p/|x|^s 为零，商无定义")
    energy = gradient_energy(mesh, u)
    if a is not None:
        coefficient = Coefficient.coerce(a)
        quad = singular_quadrature(mesh, s)
        energy += quad.integrate(coefficient(quad.points) * quad.interpolate(u) ** 2, singular=False)
    return energy / denominator ** (2.0 / p)


def interpolation_error_estimate(mesh: MeridianMesh, u, exclude_radius: float = 0.0) -> float:
    """
    P1 插值误差的边跳跃估计 max_e h_e |[∂_n u]| / 4，只看内部边

    Args:
        exclude_radius: 中点距原点小于该值的边不参与
    """
    u = np.asarray(u, dtype=float)
    nodes = np.asarray(mesh.nodes)
    cells = np.asarray(mesh.cells)
    unique, per_cell = cell_edges(cells)
    _, grads = cell_geometry(nodes, cells)
    g = np.einsum("mij,mi->mj", grads, u[cells])

    owners = np.full((len(unique), 2), -1, dtype=np.int64)
    flat_edges = per_cell.T.ravel()
    flat_cells = np.tile(np.arange(len(cells)), 3)
    order = np.argsort(flat_edges, kind="stable")
    counts = np.bincount(flat_edges, minlength=len(unique))
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    owners[:, 0] = flat_cells[order[start]]
    interior = counts == 2
    owners[interior, 1] = flat_cells[order[start[interior] + 1]]

    e = unique[interior]
    c0, c1 = owners[interior, 0], owners[interior, 1]
    d = nodes[e[:, 1]] - nodes[e[:, 0]]
    length = np.linalg.norm(d, axis=1)
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    jump = np.abs(np.einsum("ij,ij->i", g[c0] - g[c1], normal))
    midpoint = 0.5 * (nodes[e[:, 0]] + nodes[e[:, 1]])
    keep = np.linalg.norm(midpoint, axis=1) >= exclude_radius
    if not np.any(keep):
        return 0.0
    return float(np.max(length[keep] * jump[keep] / 4.0))
