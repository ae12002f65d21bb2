"""
次临界极值函数与解

工作流程：
1. minimize_quotient：归一化 Sobolev 梯度下降（每步一次刚度求解）+ Armijo 线搜索，
   再用 Newton 在 Euler–Lagrange 方程上抛光
2. continue_to_critical：p → 2⋆ 的热启动延拓，逐点记录 Pohozaev 缺陷与爆破指标
3. morse_count：线性化算子的最低特征值与非正特征值个数
4. mountain_pass：k = 1 的山路解（带爬升像的弦方法 + Newton 抛光）
"""

from dataclasses import replace
from typing import Optional, Sequence, Tuple
import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from core.errors import ConvergenceError
from core.model import (
    ContinuationRecord,
    ContinuationTrace,
    ExtremalResult,
    LinearizationSpectrum,
    MeridianMesh,
    MountainPassResult,
    SubcriticalProblem,
    WeightedOperator,
    critical_exponent,
)
from discretize import (
    assemble,
    dual_norm,
    gradient_energy,
    lowest_eigenpairs,
    require_coercive,
    solve_free,
)

ARMIJO = 1e-4
MIN_STEP = 2.0 ** -30
NEWTON_MIN_DAMPING = 2.0 ** -10

# 山路弦方法
MP_IMAGES = 12
MP_STEP = 0.5
MP_TOL = 1e-3
MP_ENDPOINT = 1.5      # 端点 T·e 取 I 变号处 t₀ 的倍数
MP_MAX_MOVE = 0.25     # 单步位移上限，相对端点的 K-范数
MP_COLLAPSE = 1e-3


def operator(problem: SubcriticalProblem) -> WeightedOperator:
    """问题对应的 Δ + a 算子，缓存在 problem.cache 中"""
    op = problem.cache.get("op")
    if op is None:
        op = assemble(problem.mesh, problem.a, problem.s)
        problem.cache["op"] = op
    return op


def _nonlinear(problem: SubcriticalProblem, op: WeightedOperator, w_free):
    """返回 (∫|w|^p/|x|^s, 自由节点上的 ∫|w|^{p−2}w φ_i/|x|^s)"""
    quad = op.quadrature
    wq = quad.interpolate(op.extend(w_free))
    aq = np.abs(wq)
    total = quad.integrate(aq ** problem.p, singular=True)
    load = quad.load(aq ** (problem.p - 2.0) * wq, singular=True)
    return total, load[op.free]


def _energy(op: WeightedOperator, K, w_free) -> float:
    return float(w_free @ (K @ w_free))


def _source_load(problem: SubcriticalProblem, op: WeightedOperator) -> np.ndarray:
    if problem.source is None:
        return np.zeros(len(op.free))
    quad = op.quadrature
    values = np.asarray(problem.source(quad.points), dtype=float)
    return quad.load(values, singular=False)[op.free]


def seed_profile(problem: SubcriticalProblem, op: WeightedOperator) -> np.ndarray:
    """
    正的初值（自由节点）

    torsion：K u = M·1 的解；bump：以 (−width·R, 0) 为心的紧支鼓包
    """
    if problem.seed == "bump":
        nodes = np.asarray(problem.mesh.nodes)[op.free]
        R = problem.mesh.spec.radius
        width = problem.seed_width * R
        d = np.linalg.norm(nodes - np.array([-width, 0.0]), axis=1) / width
        u = np.clip(1.0 - d ** 2, 0.0, None) ** 2
        if np.any(u > 0):
            return u
        print("[警告] bump 初值在网格上为零，改用 torsion 初值")
    rhs = (op.mass @ np.ones(problem.mesh.num_nodes))[op.free]
    return solve_free(op, rhs)


def _descend(
    problem: SubcriticalProblem,
    op: WeightedOperator,
    u0,
    project: bool,
    verbose: bool = False,
) -> Tuple[np.ndarray, int, bool]:
    """
    约束 ∫|u|^p/|x|^s = 1 上的 Sobolev 梯度下降

    下降方向 d = u − E K^{−1} b(u)，E = uᵀKu；‖d‖_K ≤ step_tol·√E 时停止。

    Returns:
        (归一化的 u, 迭代次数, 是否达到步长容差)
    """
    K = op.restrict(op.stiffness)
    p = problem.p
    u = np.asarray(u0, dtype=float)
    if project:
        u = np.clip(u, 0.0, None)
    N, _ = _nonlinear(problem, op, u)
    if N <= 0:
        raise ValueError("初值 ≡ 0")
    u = u / N ** (1.0 / p)
    E = _energy(op, K, u)

    for it in range(1, problem.max_iter + 1):
        _, b = _nonlinear(problem, op, u)
        d = u - E * solve_free(op, b)
        dn = math.sqrt(max(_energy(op, K, d), 0.0))
        if dn <= problem.step_tol * math.sqrt(E):
            return u, it - 1, True

        tau = 1.0
        accepted = False
        while tau >= MIN_STEP:
            trial = u - tau * d
            if project:
                trial = np.clip(trial, 0.0, None)
            Nt, _ = _nonlinear(problem, op, trial)
            if Nt > 0:
                Qt = _energy(op, K, trial) / Nt ** (2.0 / p)
                if Qt <= E - ARMIJO * 2.0 * tau * dn ** 2:
                    accepted = True
                    break
            tau *= 0.5
        if not accepted:
            if verbose:
                print(f"[求解] 第 {it} 步线搜索停滞，‖d‖_K = {dn:.3e}")
            return u, it, False

        u = trial / Nt ** (1.0 / p)
        E = Qt
        if verbose and (it == 1 or it % 25 == 0):
            print(f"[求解] 下降 {it}: Q = {E:.10g}, ‖d‖_K = {dn:.3e}, τ = {tau:.3g}")
    return u, problem.max_iter, False


def _newton(
    problem: SubcriticalProblem,
    op: WeightedOperator,
    w0,
    verbose: bool = False,
) -> Tuple[np.ndarray, float, int]:
    """
    Newton 求解 K w − b(w) = F（自由节点），带阻尼减半

    Returns:
        (w, 相对对偶范数残差, 迭代次数)；失败时抛出 ConvergenceError(best=w)
    """
    K = op.restrict(op.stiffness)
    quad = op.quadrature
    p = problem.p
    F = _source_load(problem, op)

    def residual(w):
        return _relative_residual(problem, op, w, F)

    w = np.asarray(w0, dtype=float)
    r, res = residual(w)
    for it in range(1, problem.newton_max_iter + 1):
        if res <= problem.tol:
            return w, res, it - 1
        wq = quad.interpolate(op.extend(w))
        J = K - (p - 1.0) * op.restrict(quad.matrix(np.abs(wq) ** (p - 2.0), singular=True))
        try:
            delta = splu(sp.csc_matrix(J)).solve(r)
        except RuntimeError as e:
            raise ConvergenceError(f"Newton 雅可比奇异: {e}", best=op.extend(w), iterations=it)

        step = 1.0
        while step >= NEWTON_MIN_DAMPING:
            trial = w - step * delta
            rt, res_t = residual(trial)
            if res_t < res:
                break
            step *= 0.5
        else:
            raise ConvergenceError(
                f"Newton 阻尼失败，残差停在 {res:.3e}", best=op.extend(w), iterations=it
            )
        w, r, res = trial, rt, res_t
        if verbose:
            print(f"[求解] Newton {it}: 残差 {res:.3e}, 阻尼 {step:.3g}")
    if res <= problem.tol:
        return w, res, problem.newton_max_iter
    raise ConvergenceError(
        f"Newton 在 {problem.newton_max_iter} 步内未收敛，残差 {res:.3e}",
        best=op.extend(w),
        iterations=problem.newton_max_iter,
    )


def _eigen_extremal(problem: SubcriticalProblem, op: WeightedOperator) -> ExtremalResult:
    """p = 2：K v = λ M_s v 的第一特征对"""
    K = op.restrict(op.stiffness)
    Ms = op.restrict(op.quadrature.matrix(singular=True))
    values, vectors = lowest_eigenpairs(K, Ms, 1)
    v = vectors[:, 0]
    if np.sum(v) < 0:
        v = -v
    v = v / math.sqrt(float(v @ (Ms @ v)))
    residual = dual_norm(op, K @ v - values[0] * (Ms @ v)) / math.sqrt(max(_energy(op, K, v), 1e-300))
    full = op.extend(v)
    scale = np.max(np.abs(v))
    return ExtremalResult(
        v=full,
        mu=_energy(op, K, v),
        residual=residual,
        iterations=1,
        positive=bool(np.all(v >= -1e-10 * scale)),
        energy=gradient_energy(problem.mesh, full),
        converged=True,
        solution=full,
        p=problem.p,
        s=problem.s,
        nehari_level=float("nan"),
    )


def _extremal_from_solution(
    problem: SubcriticalProblem, op: WeightedOperator, w, residual: float, iterations: int, converged: bool
) -> ExtremalResult:
    K = op.restrict(op.stiffness)
    p = problem.p
    N, _ = _nonlinear(problem, op, w)
    v = w / N ** (1.0 / p)
    if np.sum(v) < 0:
        v, w = -v, -w
    mu = _energy(op, K, v)
    scale = np.max(np.abs(v))
    full_v = op.extend(v)
    return ExtremalResult(
        v=full_v,
        mu=mu,
        residual=residual,
        iterations=iterations,
        positive=bool(np.all(v >= -1e-10 * scale)),
        energy=gradient_energy(problem.mesh, full_v),
        converged=converged,
        solution=op.extend(w),
        p=p,
        s=problem.s,
        nehari_level=(0.5 - 1.0 / p) * mu ** (p / (p - 2.0)),
    )


def minimize_quotient(problem: SubcriticalProblem, init=None, verbose: bool = False) -> ExtremalResult:
    """
    计算 μ_{s,p}(Ω) 及其正极值函数

    Args:
        problem: 次临界问题
        init: 可选的热启动节点场（全部节点）
        verbose: 打印迭代信息

    Returns:
        ExtremalResult；迭代预算耗尽时返回最佳迭代并标记 converged=False
    """
    op = operator(problem)
    require_coercive(op)
    if problem.p == 2.0:
        return _eigen_extremal(problem, op)

    u0 = seed_profile(problem, op) if init is None else np.asarray(init, dtype=float)[op.free]
    if not np.any(u0 > 0):
        u0 = seed_profile(problem, op)
    v, iterations, descended = _descend(problem, op, u0, project=True, verbose=verbose)

    K = op.restrict(op.stiffness)
    mu = _energy(op, K, v)
    w0 = mu ** (1.0 / (problem.p - 2.0)) * v
    try:
        w, residual, steps = _newton(problem, op, w0, verbose=verbose)
        converged = True
    except ConvergenceError as e:
        print(f"[警告] {e}")
        w = w0 if e.best is None else np.asarray(e.best)[op.free]
        _, residual = _relative_residual(problem, op, w)
        steps = e.iterations
        converged = False

    result = _extremal_from_solution(problem, op, w, residual, iterations + steps, converged)
    if verbose:
        print(
            f"[求解] p={problem.p:.6g} μ={result.mu:.10g} 残差={result.residual:.2e} "
            f"下降 {iterations} 步 ({'收敛' if descended else '未达容差'}), Newton {steps} 步"
        )
    return result


def _relative_residual(problem, op, w, F=None):
    """K w − b(w) − F 及其相对对偶范数"""
    K = op.restrict(op.stiffness)
    F = _source_load(problem, op) if F is None else F
    _, b = _nonlinear(problem, op, w)
    r = K @ w - b - F
    scale = max(math.sqrt(max(_energy(op, K, w), 0.0)), dual_norm(op, F), 1e-300)
    return r, dual_norm(op, r) / scale


def solve_euler_lagrange(problem: SubcriticalProblem, init, verbose: bool = False) -> np.ndarray:
    """
    Newton 求解 Δu + a u = |u|^{p−2}u/|x|^s (+ f)

    Args:
        init: 初值节点场，不能恒为零

    Returns:
        全部节点上的解；失败时抛出 ConvergenceError
    """
    init = np.asarray(init, dtype=float)
    if not np.any(init):
        raise ValueError("初值 u ≡ 0 不可用")
    if problem.p == 2.0:
        raise ValueError("p = 2 时方程是线性特征问题，请使用 minimize_quotient")
    op = operator(problem)
    w, residual, steps = _newton(problem, op, init[op.free], verbose=verbose)
    if verbose:
        print(f"[求解] Newton 收敛: {steps} 步, 残差 {residual:.3e}")
    return op.extend(w)


def newton_steps(problem: SubcriticalProblem, init) -> int:
    """从 init 出发 Newton 收敛所需的步数"""
    op = operator(problem)
    _, _, steps = _newton(problem, op, np.asarray(init, dtype=float)[op.free])
    return steps


def geometric_p_grid(n: int, s: float, gap_max: float = 0.2, gap_min: float = 0.01) -> Tuple[float, ...]:
    """间隙 2⋆ − p 取 gap_max, gap_max/2, ... 直到 gap_min"""
    if not 0 < gap_min <= gap_max:
        raise ValueError("需要 0 < gap_min ≤ gap_max")
    pc = critical_exponent(n, s)
    gaps = []
    gap = gap_max
    while gap > gap_min * (1 + 1e-12):
        gaps.append(gap)
        gap *= 0.5
    gaps.append(gap_min)
    return tuple(pc - g for g in gaps if pc - g > 2.0)


def continue_to_critical(
    problem: SubcriticalProblem,
    p_grid: Sequence[float],
    gap_min: float = 0.01,
    blowup_factor: float = 10.0,
    pohozaev_radius: Optional[float] = None,
    verbose: bool = False,
) -> ContinuationTrace:
    """
    热启动地沿 p_grid 推进到 2⋆ 附近

    每个点的失败被记录（failed=True）而不中断；sup 范数超过首点的
    blowup_factor 倍时标记爆破。
    """
    from blowup import extract_scales
    from pohozaev import pohozaev_defect

    grid = [float(p) for p in p_grid]
    pc = problem.critical_exponent
    if not grid:
        raise ValueError("p_grid 不能为空")
    if any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ValueError("p_grid 必须严格递增")
    if grid[0] <= 2.0 or grid[-1] > pc - gap_min + 1e-12:
        raise ValueError(f"p_grid 必须位于 (2, 2⋆ − gap_min] = (2, {pc - gap_min:.6g}]")

    mesh = problem.mesh
    radius = pohozaev_radius
    records = []
    init = None
    first_sup = None
    print("=" * 80)
    print(f"[延拓] {mesh.spec.family} κ={mesh.spec.kappa} s={problem.s}: {len(grid)} 个 p 点, 2⋆={pc:.6g}")
    for p in grid:
        step = replace(problem, p=p, cache={"op": operator(problem)})
        try:
            result = minimize_quotient(step, init=init, verbose=verbose)
            if result.converged:
                init = result.v
            w = result.solution
            p_eps = pc - p
            decomposition = extract_scales(mesh, w, p_eps, a=problem.a)
            scales = decomposition.scales
            r = radius
            if r is None:
                r = 0.5 * mesh.spec.radius
                if scales:
                    r = min(r, math.sqrt(scales[-1].mu))
            report = pohozaev_defect(mesh, w, problem.a, p, problem.s, r)
            if first_sup is None:
                first_sup = result.sup_norm
            record = ContinuationRecord(
                p=p,
                gap=p_eps,
                mu=result.mu,
                sup_norm=result.sup_norm,
                energy=result.energy,
                pohozaev_defect=report.defect,
                bubble_count=decomposition.count,
                smallest_scale=scales[-1].mu if scales else float("nan"),
                blowup=result.sup_norm > blowup_factor * first_sup,
                failed=not result.converged,
                message="" if result.converged else f"残差 {result.residual:.2e} 未达容差",
                result=result,
            )
            print(
                f"[延拓] p={p:.6g} gap={p_eps:.4g} μ={result.mu:.8g} "
                f"sup={result.sup_norm:.4g} 气泡={decomposition.count}"
            )
        except Exception as e:
            print(f"[失败] p={p:.6g}: {e}")
            record = ContinuationRecord(p=p, gap=pc - p, failed=True, message=str(e))
        records.append(record)
    trace = ContinuationTrace(records=tuple(records), critical_exponent=pc)
    print(f"[统计] sup 范数比 末/首 = {trace.sup_ratio():.4g}")
    return trace


def morse_count(
    mesh: MeridianMesh,
    v,
    p: float,
    s: Optional[float] = None,
    a=0.0,
    k: int = 6,
    seed: int = 0,
) -> LinearizationSpectrum:
    """
    Δ + a − (p−1)|v|^{p−2}/|x|^s 在 Dirichlet 条件下的 k 个最低特征值

    非正特征值计数 nonpositive_count；potential_norm 为 L^{n/2} 范数的 n/2 次幂
    """
    s = mesh.spec.s if s is None else s
    op = assemble(mesh, a, s)
    quad = op.quadrature
    vq = quad.interpolate(v)
    potential = (p - 1.0) * np.abs(vq) ** (p - 2.0)
    L = op.restrict(op.stiffness - quad.matrix(potential, singular=True))
    M = op.restrict(op.mass)
    k = min(k, L.shape[0])
    values, _ = lowest_eigenpairs(L, M, k, seed=seed)
    values = np.sort(values)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(values))))
    singular = np.linalg.norm(quad.points, axis=1) ** (-s) if s else np.ones(len(vq))
    potential_norm = quad.integrate((potential * singular) ** (mesh.n / 2.0), singular=False)
    return LinearizationSpectrum(
        eigenvalues=values,
        nonpositive_count=int(np.sum(values <= tol)),
        potential_norm=float(potential_norm),
    )


def _action(problem: SubcriticalProblem, op: WeightedOperator, K, F, w) -> Tuple[float, np.ndarray]:
    """I_p(w) = ½ wᵀKw − (1/p)∫|w|^p/|x|^s − Fᵀw 及其 Sobolev 梯度 w − K^{−1}(b(w) + F)"""
    N, b = _nonlinear(problem, op, w)
    value = 0.5 * _energy(op, K, w) - N / problem.p - float(F @ w)
    return value, w - solve_free(op, b + F)


def _reparametrize(path: np.ndarray, K, lo: int, hi: int) -> None:
    """把 path[lo..hi] 按 K-弧长重新等距分布，两端不动"""
    if hi - lo < 2:
        return
    segment = path[lo:hi + 1]
    steps = np.diff(segment, axis=0)
    lengths = np.sqrt(np.maximum(np.einsum("ij,ij->i", steps, (K @ steps.T).T), 0.0))
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    if arc[-1] <= 0:
        return
    targets = np.linspace(0.0, arc[-1], hi - lo + 1)
    new = segment.copy()
    for j in range(1, hi - lo):
        k = min(int(np.searchsorted(arc, targets[j], side="right")) - 1, len(lengths) - 1)
        t = 0.0 if lengths[k] <= 0 else (targets[j] - arc[k]) / lengths[k]
        new[j] = (1.0 - t) * segment[k] + t * segment[k + 1]
    path[lo + 1:hi] = new[1:-1]


def mountain_pass(
    problem: SubcriticalProblem,
    images: int = MP_IMAGES,
    step: float = MP_STEP,
    seed: int = 0,
    verbose: bool = False,
) -> MountainPassResult:
    """
    k = 1 的山路解：带爬升像的弦方法

    路径 0 = w_0, w_1, ..., w_M = T·e 两端固定，I_p(T·e) < 0。每一步：
    非最高点沿 Sobolev 梯度下降；最高点 w_c 沿路径切向反号爬升；
    然后在 [0, c] 与 [c, M] 上各自按 K-弧长重新等距。
    最高点梯度足够小后用 Newton 抛光，水平 c = I_p(抛光后的鞍点)。

    Args:
        problem: 次临界问题，p > 2
        images: 路径上的状态数 M
        step: 梯度步长
        seed: 端点扰动的随机种子

    Returns:
        MountainPassResult；路径最高点塌缩到 0 时抛出 ConvergenceError
    """
    if problem.p == 2.0:
        raise ValueError("mountain_pass 需要 p > 2")
    if images < 3:
        raise ValueError(f"images 至少为 3，当前为 {images}")
    op = operator(problem)
    require_coercive(op)
    K = op.restrict(op.stiffness)
    F = _source_load(problem, op)
    p = problem.p

    rng = np.random.default_rng(seed)
    e = seed_profile(problem, op)
    e = e * (1.0 + 0.05 * rng.standard_normal(len(e)))
    E = _energy(op, K, e)
    N, _ = _nonlinear(problem, op, e)
    if N <= 0:
        raise ConvergenceError("山路端点退化为零")
    # I(t·e) = t²E/2 − t^p N/p 在 t₀ = (pE/2N)^{1/(p−2)} 处变号
    T = MP_ENDPOINT * (p * E / (2.0 * N)) ** (1.0 / (p - 2.0))
    while _action(problem, op, K, F, T * e)[0] >= 0:
        T *= 2.0
    path = np.outer(np.linspace(0.0, 1.0, images + 1), T * e)
    endpoint_energy = _action(problem, op, K, F, path[-1])[0]
    max_move = MP_MAX_MOVE * math.sqrt(_energy(op, K, path[-1]))

    climb = 0
    gnorm = float("inf")
    iterations = 0
    for iterations in range(1, problem.max_iter + 1):
        values = np.empty(images + 1)
        grads = np.zeros_like(path)
        for j in range(1, images):
            values[j], grads[j] = _action(problem, op, K, F, path[j])
        values[0] = _action(problem, op, K, F, path[0])[0]
        values[-1] = endpoint_energy
        climb = int(np.argmax(values[1:images])) + 1

        tangent = path[climb + 1] - path[climb - 1]
        tn = math.sqrt(max(_energy(op, K, tangent), 0.0))
        g = grads[climb]
        if tn > 0:
            tangent = tangent / tn
            g = g - 2.0 * float(g @ (K @ tangent)) * tangent
        grads[climb] = g
        gnorm = math.sqrt(max(_energy(op, K, g), 0.0))
        scale = math.sqrt(max(_energy(op, K, path[climb]), 0.0))
        if scale <= MP_COLLAPSE * max_move:
            raise ConvergenceError("山路路径塌缩到零", best=op.extend(path[climb]), iterations=iterations)
        if gnorm <= MP_TOL * scale:
            break

        for j in range(1, images):
            move = step * grads[j]
            size = math.sqrt(max(_energy(op, K, move), 0.0))
            if size > max_move:
                move *= max_move / size
            path[j] = path[j] - move
        _reparametrize(path, K, 0, climb)
        _reparametrize(path, K, climb, images)
        if verbose and (iterations == 1 or iterations % 25 == 0):
            print(f"[求解] 山路 {iterations}: max I = {values[climb]:.10g} (第 {climb} 个状态), ‖g‖_K = {gnorm:.3e}")

    path_max = float(_action(problem, op, K, F, path[climb])[0])
    w = path[climb]
    converged = True
    try:
        w, residual, steps = _newton(problem, op, w, verbose=verbose)
    except ConvergenceError as err:
        w = np.asarray(err.best)[op.free]
        _, residual = _relative_residual(problem, op, w)
        steps = err.iterations
        converged = False

    level, _ = _action(problem, op, K, F, w)
    full = op.extend(w)
    spectrum = morse_count(problem.mesh, full, p, problem.s, problem.a, k=3, seed=seed)
    scale = np.max(np.abs(w))
    sign_changing = bool(np.any(w > 1e-8 * scale) and np.any(w < -1e-8 * scale))
    if verbose:
        print(
            f"[求解] 山路水平 {level:.8g}（路径最高 {path_max:.8g}），端点 I = {endpoint_energy:.4g}, "
            f"弦 {iterations} 步, Newton {steps} 步, 残差 {residual:.2e}, 变号={sign_changing}"
        )
    return MountainPassResult(
        u=full,
        level=float(level),
        residual=residual,
        iterations=iterations + steps,
        converged=converged,
        sign_changing=sign_changing,
        nonpositive_count=spectrum.nonpositive_count,
        path_max=path_max,
        endpoint_energy=float(endpoint_energy),
        images=images,
    )
