"""
区域与子午网格

工作流程：
1. 由 DomainSpec 选择区域族，得到边界图与 0 处的曲率数据
2. 在参考扇形 {ρ ≤ R, 0 ≤ θ ≤ θ₀} 上生成环形网格，向原点按 0.7 几何加密
3. 用剪切 (x₁, r) ↦ (x₁ + φ₀(r), r) 映到物理区域（保面积、单射）
4. 标记节点与边界边，检查单元质量

坐标约定：子午面坐标 (x₁, r)，r ≥ 0 为到对称轴的距离，区域位于 x₁ < φ₀(r)。
"""

from dataclasses import replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple
import json
import math

import numpy as np
from matplotlib.tri import LinearTriInterpolator, Triangulation

from core.errors import GeometryError, MeshQualityError
from core.model import (
    BoundaryChart,
    CurvatureData,
    DomainSpec,
    EdgeTag,
    MeridianMesh,
    NodeTag,
)
from family import get_family

GRADING_RATIO = 0.7
QUALITY_FLOOR = 0.02
MAX_SLOPE = 1.0
MESH_FORMAT_VERSION = 1


def make_domain(
    spec: DomainSpec, q_min: float = QUALITY_FLOOR, verbose: bool = False
) -> Tuple[MeridianMesh, Optional[BoundaryChart], Optional[CurvatureData]]:
    """
    生成区域网格、边界图与曲率数据

    Args:
        spec: 区域描述
        q_min: 单元质量下限（面积 / 最长边²）
        verbose: 打印网格统计

    Returns:
        (mesh, chart, curvature)；锥没有 chart 与 curvature，返回 None
    """
    family = get_family(spec.family)
    family.validate(spec)
    chart = family.chart(spec)
    curvature = family.curvature(spec)
    theta0 = family.aperture(spec)

    if chart is not None:
        samples = np.linspace(0.0, spec.radius, 2049)
        slope = float(np.max(np.abs(chart.dphi0(samples))))
        if slope > MAX_SLOPE:
            raise GeometryError(
                f"子午线斜率 max|φ₀'| = {slope:.3g} 超过 {MAX_SLOPE}，"
                f"kappa={spec.kappa} 与 radius={spec.radius} 的组合使边界折叠"
            )

    h = theta0 * spec.radius / spec.meridian_samples
    ref_nodes, cells = _sector_mesh(spec.radius, theta0, h, spec.h_min)
    mesh = _assemble_mesh(spec, chart, ref_nodes, cells, q_min)

    if family.star_shaped:
        ok, worst = star_shape_check(mesh)
        if not ok:
            raise GeometryError(f"{spec.family} 生成的网格不是星形的: min (x,ν) = {worst:.3e}")

    if verbose:
        print(
            f"[网格] {spec.family} κ={spec.kappa} R={spec.radius}: "
            f"{mesh.num_nodes} 节点, {len(mesh.cells)} 单元, h={mesh.h:.4g}"
        )
    return mesh, chart, curvature


def chart_map(chart: Optional[BoundaryChart], local) -> np.ndarray:
    """
    边界图 (x₁, y) ↦ (x₁ + φ₀(|y|), y)

    local 的最后一维为 (x₁, y₁, ..., y_{n−1})；子午面坐标 (x₁, r) 是 n = 2 的特例。
    chart 为 None 时为恒等映射。
    """
    local = np.asarray(local, dtype=float)
    if chart is None:
        return local.copy()
    radius = np.linalg.norm(local, axis=-1)
    if np.any(radius >= chart.valid_radius * (1 + 1e-12)):
        raise GeometryError(f"点超出边界图的有效半径 {chart.valid_radius}")
    out = local.copy()
    r = np.linalg.norm(local[..., 1:], axis=-1)
    out[..., 0] = local[..., 0] + chart.phi0(r)
    return out


def star_shape_check(mesh: MeridianMesh, tol: float = 1e-10) -> Tuple[bool, float]:
    """
    在 Dirichlet 边界的求积点上检查 (x, ν) ≥ −tol

    Returns:
        (是否星形, (x, ν) 的最小值)
    """
    points, normals, _, _ = boundary_quadrature(mesh)
    values = np.einsum("ij,ij->i", points, normals)
    worst = float(values.min())
    return worst >= -tol * mesh.spec.radius ** 2, worst


def refine(mesh: MeridianMesh, levels: int = 1, q_min: float = QUALITY_FLOOR) -> MeridianMesh:
    """
    中点加密：每个三角形一分为四，外圆弧上的新节点投影回 ρ = R，
    然后重新经过边界图映到物理区域。
    """
    if levels < 1:
        raise ValueError(f"levels 必须 ≥ 1，当前为 {levels}")
    out = mesh
    for _ in range(levels):
        out = _refine_once(out, q_min)
    return out


def scale_mesh(mesh: MeridianMesh, factor: float) -> MeridianMesh:
    """把网格整体放大 factor 倍（只用于无剪切的平坦区域）"""
    if factor <= 0:
        raise ValueError("缩放因子必须为正")
    spec = replace(
        mesh.spec,
        radius=mesh.spec.radius * factor,
        h_min=None if mesh.spec.h_min is None else mesh.spec.h_min * factor,
    )
    chart = get_family(spec.family).chart(spec) if mesh.chart is not None else None
    return replace(
        mesh,
        spec=spec,
        nodes=np.asarray(mesh.nodes) * factor,
        ref_nodes=np.asarray(mesh.ref_nodes) * factor,
        h=mesh.h * factor,
        chart=chart,
    )


# ---------------------------------------------------------------- 网格生成


def _ring_radii(radius: float, h: float, h_min: Optional[float]) -> np.ndarray:
    count = max(1, int(round(radius / h)))
    uniform = radius * np.arange(count, 0, -1) / count
    inner = uniform[-1]
    h_min = inner / 30.0 if h_min is None else h_min
    depth = 0
    if h_min < inner:
        depth = int(math.ceil(math.log(h_min / inner) / math.log(GRADING_RATIO)))
    graded = inner * GRADING_RATIO ** np.arange(1, depth + 1)
    return np.concatenate([uniform, graded])[::-1]


def _sector_mesh(radius: float, theta0: float, h: float, h_min: Optional[float]):
    """参考扇形上的环形三角剖分；节点 0 为原点，其余按环由内向外排列"""
    radii = _ring_radii(radius, h, h_min)
    m_min = max(4, int(math.ceil(8 * theta0 / math.pi)))
    flat = abs(theta0 - math.pi / 2) < 1e-15

    nodes = [np.zeros((1, 2))]
    rings = []
    offset = 1
    for rho in radii:
        m = max(m_min, int(math.ceil(theta0 * rho / h - 1e-9)))
        theta = theta0 * np.arange(m + 1) / m
        ring = np.column_stack([-rho * np.cos(theta), rho * np.sin(theta)])
        ring[0, 1] = 0.0
        if flat:
            ring[-1] = (0.0, rho)
        nodes.append(ring)
        rings.append((np.arange(offset, offset + m + 1), theta))
        offset += m + 1
    ref_nodes = np.vstack(nodes)

    cells = []
    first, _ = rings[0]
    for j in range(len(first) - 1):
        cells.append((0, first[j], first[j + 1]))
    for (inner, t_in), (outer, t_out) in zip(rings[:-1], rings[1:]):
        cells.extend(_strip(inner, t_in, outer, t_out))
    cells = np.array(cells, dtype=np.int64)
    return ref_nodes, orient_cells(ref_nodes, cells)


def _strip(inner, t_in, outer, t_out):
    """相邻两环之间的条带：按角度推进较小的一侧"""
    i = j = 0
    a, b = len(outer) - 1, len(inner) - 1
    out = []
    while i < a or j < b:
        if j == b or (i < a and t_out[i + 1] <= t_in[j + 1]):
            out.append((outer[i], outer[i + 1], inner[j]))
            i += 1
        else:
            out.append((outer[i], inner[j + 1], inner[j]))
            j += 1
    return out


def orient_cells(nodes, cells) -> np.ndarray:
    area, _ = cell_geometry(nodes, cells)
    cells = cells.copy()
    flip = area < 0
    cells[flip, 1], cells[flip, 2] = cells[flip, 2].copy(), cells[flip, 1].copy()
    return cells


def _physical(chart: Optional[BoundaryChart], ref_nodes: np.ndarray) -> np.ndarray:
    nodes = np.array(ref_nodes, dtype=float)
    if chart is not None:
        nodes[:, 0] = nodes[:, 0] + chart.phi0(nodes[:, 1])
    return nodes


def _assemble_mesh(spec, chart, ref_nodes, cells, q_min) -> MeridianMesh:
    nodes = _physical(chart, ref_nodes)
    edges = boundary_edges(cells)
    on_axis = (ref_nodes[edges[:, 0], 1] == 0.0) & (ref_nodes[edges[:, 1], 1] == 0.0)
    edge_tags = np.where(on_axis, int(EdgeTag.AXIS), int(EdgeTag.DIRICHLET))
    rho = np.linalg.norm(ref_nodes, axis=1)
    at_arc = np.abs(rho - spec.radius) <= 1e-12 * spec.radius
    edge_on_arc = at_arc[edges[:, 0]] & at_arc[edges[:, 1]]

    origin = np.flatnonzero(rho == 0.0)
    if len(origin) != 1:
        raise GeometryError(f"网格必须恰好有一个原点节点，当前 {len(origin)} 个")
    origin = int(origin[0])

    node_tags = np.full(len(nodes), int(NodeTag.INTERIOR))
    node_tags[np.unique(edges[edge_tags == EdgeTag.AXIS])] = int(NodeTag.AXIS)
    node_tags[np.unique(edges[edge_tags == EdgeTag.DIRICHLET])] = int(NodeTag.DIRICHLET)
    node_tags[origin] = int(NodeTag.SINGULAR_VERTEX)

    check_quality(nodes, cells, q_min)
    return MeridianMesh(
        spec=spec,
        nodes=nodes,
        ref_nodes=ref_nodes,
        cells=cells,
        node_tags=node_tags,
        edges=edges,
        edge_tags=edge_tags,
        edge_on_arc=edge_on_arc,
        origin=origin,
        h=max_edge_length(nodes, cells),
        chart=chart,
    )


def _refine_once(mesh: MeridianMesh, q_min: float) -> MeridianMesh:
    cells = np.asarray(mesh.cells)
    ref = np.asarray(mesh.ref_nodes)
    unique, per_cell = cell_edges(cells)
    mid = 0.5 * (ref[unique[:, 0]] + ref[unique[:, 1]])

    # 外圆弧上的中点投影回 ρ = R
    arc_keys = set(map(tuple, np.sort(mesh.edges[mesh.edge_on_arc], axis=1)))
    if arc_keys:
        on_arc = np.array([tuple(e) in arc_keys for e in unique])
        mid[on_arc] *= mesh.spec.radius / np.linalg.norm(mid[on_arc], axis=1)[:, None]

    base = len(ref)
    m01, m12, m20 = (base + per_cell[:, k] for k in range(3))
    a, b, c = cells[:, 0], cells[:, 1], cells[:, 2]
    children = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    new_ref = np.vstack([ref, mid])
    return _assemble_mesh(mesh.spec, mesh.chart, new_ref, children, q_min)


# ---------------------------------------------------------------- 几何工具


def cell_geometry(nodes, cells):
    """
    单元面积（带符号）与重心坐标梯度

    Returns:
        area: (M,)；grads: (M, 3, 2)，grads[m, i] = ∇λ_i
    """
    nodes = np.asarray(nodes, dtype=float)
    p0 = nodes[cells[:, 0]]
    d1 = nodes[cells[:, 1]] - p0
    d2 = nodes[cells[:, 2]] - p0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-(g1 + g2), g1, g2], axis=1)
    return 0.5 * det, grads


def cell_gradients(mesh: MeridianMesh, u) -> np.ndarray:
    """P1 场在每个单元上的常梯度 (M, 2)"""
    _, grads = cell_geometry(mesh.nodes, mesh.cells)
    u = np.asarray(u, dtype=float)
    return np.einsum("mij,mi->mj", grads, u[mesh.cells])


def cell_edges(cells):
    """唯一边 (K, 2) 与每个单元三条边 (01, 12, 20) 的编号 (M, 3)"""
    e = np.vstack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    e = np.sort(e, axis=1)
    unique, inverse = np.unique(e, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    return unique, inverse.reshape(3, -1).T


def boundary_edges(cells) -> np.ndarray:
    e = np.vstack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    e = np.sort(e, axis=1)
    unique, counts = np.unique(e, axis=0, return_counts=True)
    return unique[counts == 1]


def max_edge_length(nodes, cells) -> float:
    nodes = np.asarray(nodes)
    lengths = [
        np.linalg.norm(nodes[cells[:, i]] - nodes[cells[:, (i + 1) % 3]], axis=1)
        for i in range(3)
    ]
    return float(np.max(lengths))


def check_quality(nodes, cells, q_min: float = QUALITY_FLOOR) -> float:
    """返回最小质量 面积/最长边²，低于 q_min 时抛出 MeshQualityError"""
    area, _ = cell_geometry(nodes, cells)
    nodes = np.asarray(nodes)
    longest = np.max([
        np.linalg.norm(nodes[cells[:, i]] - nodes[cells[:, (i + 1) % 3]], axis=1)
        for i in range(3)
    ], axis=0)
    quality = area / longest ** 2
    worst = float(quality.min())
    if worst < q_min:
        bad = int(np.argmin(quality))
        raise MeshQualityError(f"单元 {bad} 质量 {worst:.3e} 低于下限 {q_min}")
    return worst


def edge_adjacency(mesh: MeridianMesh, edges=None):
    """
    每条边界边所属的单元及该单元的第三个顶点

    Returns:
        (cell 索引, 第三个顶点索引)
    """
    cells = np.asarray(mesh.cells)
    edges = mesh.edges if edges is None else np.asarray(edges)
    n = mesh.num_nodes
    local = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
    keys, owner, third = [], [], []
    for i, j, k in local:
        a = np.minimum(cells[:, i], cells[:, j])
        b = np.maximum(cells[:, i], cells[:, j])
        keys.append(a * n + b)
        owner.append(np.arange(len(cells)))
        third.append(cells[:, k])
    keys = np.concatenate(keys)
    owner = np.concatenate(owner)
    third = np.concatenate(third)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    query = np.minimum(edges[:, 0], edges[:, 1]) * n + np.maximum(edges[:, 0], edges[:, 1])
    pos = np.searchsorted(sorted_keys, query)
    if np.any(pos >= len(sorted_keys)) or np.any(sorted_keys[np.minimum(pos, len(sorted_keys) - 1)] != query):
        raise GeometryError("边界边不属于任何单元")
    return owner[order[pos]], third[order[pos]]


def outward_normals(mesh: MeridianMesh, edges=None):
    """
    边界边的外法向（背离所属单元第三个顶点）

    Returns:
        (单位法向 (E, 2), 边长 (E,), 所属单元 (E,))
    """
    edges = mesh.dirichlet_edges if edges is None else np.asarray(edges)
    nodes = np.asarray(mesh.nodes)
    cell, third = edge_adjacency(mesh, edges)
    d = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    length = np.linalg.norm(d, axis=1)
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    inward = np.einsum("ij,ij->i", nodes[third] - nodes[edges[:, 0]], normal)
    normal[inward > 0] *= -1.0
    return normal, length, cell


_GAUSS2 = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


def boundary_quadrature(mesh: MeridianMesh, edges=None):
    """
    边界边上的两点 Gauss 规则

    Returns:
        points (2E, 2), normals (2E, 2), weights (2E,)（只含弧长，不含 c_n r^{n−2}）,
        cells (2E,)
    """
    edges = mesh.dirichlet_edges if edges is None else np.asarray(edges)
    nodes = np.asarray(mesh.nodes)
    normal, length, cell = outward_normals(mesh, edges)
    points, normals, weights, owners = [], [], [], []
    for t in _GAUSS2:
        points.append((1 - t) * nodes[edges[:, 0]] + t * nodes[edges[:, 1]])
        normals.append(normal)
        weights.append(0.5 * length)
        owners.append(cell)
    return np.vstack(points), np.vstack(normals), np.concatenate(weights), np.concatenate(owners)


def boundary_distance(mesh: MeridianMesh, points) -> np.ndarray:
    """到物理边界 ∂Ω（Dirichlet 边）的距离；轴不是边界"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    edges = mesh.dirichlet_edges
    a = np.asarray(mesh.nodes)[edges[:, 0]]
    b = np.asarray(mesh.nodes)[edges[:, 1]]
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pek,ek->pe", ap, ab) / np.einsum("ek,ek->e", ab, ab), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.min(np.linalg.norm(points[:, None, :] - closest, axis=2), axis=1)


@lru_cache(maxsize=64)
def triangulation(mesh: MeridianMesh) -> Triangulation:
    nodes = np.asarray(mesh.nodes)
    return Triangulation(nodes[:, 0], nodes[:, 1], np.asarray(mesh.cells))


def locate(mesh: MeridianMesh, points) -> np.ndarray:
    """点所在的单元编号，区域外为 −1"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    finder = triangulation(mesh).get_trifinder()
    return np.asarray(finder(points[:, 0], points[:, 1]), dtype=np.int64)


def interpolate_at(mesh: MeridianMesh, u, points) -> Tuple[np.ndarray, np.ndarray]:
    """
    P1 场在任意点的值

    Returns:
        (values, inside)；区域外的点取 0，inside 为 False
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    interp = LinearTriInterpolator(triangulation(mesh), np.asarray(u, dtype=float))
    values = np.ma.masked_invalid(interp(points[:, 0], points[:, 1]))
    inside = ~np.ma.getmaskarray(values)
    return np.asarray(values.filled(0.0)), inside


# ---------------------------------------------------------------- 文本格式


def export_mesh(mesh: MeridianMesh, path, values=None) -> Path:
    """
    以行文本写出网格（及可选的节点场）

    头部为 n、s、weight_exponent 与区域描述，之后依次是节点、单元、边界边。
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = mesh.spec
    lines = [
        f"hslab-mesh {MESH_FORMAT_VERSION}",
        f"n {spec.n}",
        f"s {spec.s:.17g}",
        f"weight_exponent {mesh.weight_exponent}",
        "spec " + json.dumps(_spec_dict(spec), sort_keys=True),
        f"origin {mesh.origin}",
        f"nodes {mesh.num_nodes} {'values' if values is not None else 'plain'}",
    ]
    nodes, ref, tags = mesh.nodes, mesh.ref_nodes, mesh.node_tags
    for i in range(mesh.num_nodes):
        row = f"{nodes[i, 0]:.17g} {nodes[i, 1]:.17g} {ref[i, 0]:.17g} {ref[i, 1]:.17g} {tags[i]}"
        if values is not None:
            row += f" {float(values[i]):.17g}"
        lines.append(row)
    lines.append(f"cells {len(mesh.cells)}")
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.cells)
    lines.append(f"edges {len(mesh.edges)}")
    lines.extend(
        f"{e[0]} {e[1]} {t} {int(arc)}"
        for e, t, arc in zip(mesh.edges, mesh.edge_tags, mesh.edge_on_arc)
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def import_mesh(path) -> Tuple[MeridianMesh, Optional[np.ndarray]]:
    """读入 export_mesh 写出的文件，返回 (mesh, values 或 None)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"网格文件不存在: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    it = iter(lines)
    header = next(it).split()
    if header[0] != "hslab-mesh":
        raise ValueError(f"不是 hslab 网格文件: {path}")
    fields = {}
    while True:
        key, _, rest = next(it).partition(" ")
        fields[key] = rest
        if key == "nodes":
            break
    spec = DomainSpec(**_spec_from_dict(json.loads(fields["spec"])))
    count, kind = fields["nodes"].split()
    rows = np.array([next(it).split() for _ in range(int(count))], dtype=float).reshape(int(count), -1)
    nodes, ref, tags = rows[:, 0:2], rows[:, 2:4], rows[:, 4].astype(np.int64)
    values = rows[:, 5].copy() if kind == "values" else None
    m = int(next(it).split()[1])
    cells = np.array([next(it).split() for _ in range(m)], dtype=np.int64).reshape(m, 3)
    e = int(next(it).split()[1])
    edge_rows = np.array([next(it).split() for _ in range(e)], dtype=np.int64).reshape(e, 4)
    chart = get_family(spec.family).chart(spec)
    mesh = MeridianMesh(
        spec=spec,
        nodes=nodes,
        ref_nodes=ref,
        cells=cells,
        node_tags=tags,
        edges=edge_rows[:, :2],
        edge_tags=edge_rows[:, 2],
        edge_on_arc=edge_rows[:, 3].astype(bool),
        origin=int(fields["origin"]),
        h=max_edge_length(nodes, cells),
        chart=chart,
    )
    return mesh, values


def _spec_dict(spec: DomainSpec) -> dict:
    return {
        "n": spec.n,
        "s": spec.s,
        "family": spec.family,
        "kappa": spec.kappa,
        "radius": spec.radius,
        "meridian_samples": spec.meridian_samples,
        "aperture": spec.aperture,
        "h_min": spec.h_min,
        "coefficients": list(spec.coefficients),
        "cutoff": spec.cutoff,
    }


def _spec_from_dict(data: dict) -> dict:
    data = dict(data)
    data["coefficients"] = tuple(data.get("coefficients", ()))
    return data
