"""
hslab 实验主程序

工作流程：
1. 读取 YAML 配置（支持分节与 geometry.kappa 形式的点号键），叠加环境变量与命令行覆盖
2. 在任何计算之前按各模块的前置条件校验参数
3. 运行指定实验，把 CSV 表与 SVG 图写到 out/<实验>_<配置哈希前 12 位>/
4. 追加运行账本记录，推送飞书摘要（未配置时跳过）

用法：
    python main.py <experiment> --config config.yaml [--out DIR] [--threads N] [--seed S]
                   [--set geometry.kappa=-1 ...] [ledger ...]

退出码：0 成功，2 配置错误，3 求解失败，4 不变量检查失败。
"""

from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import argparse
import os
import sys

import dotenv
import numpy as np
import yaml

from core.errors import ConfigError, ConvergenceError, GeometryError, HslabError, InvariantViolation
from core.model import EXPERIMENTS, DomainSpec, ExperimentConfig, SubcriticalProblem
from family import get_family
from feishu import FeishuNotifier
from ledger import RunLedger, digest, read_ledger
import plots

dotenv.load_dotenv()

DEFAULTS: Dict[str, Dict] = {
    "geometry": {
        "n": 3,
        "s": 1.0,
        "family": "perturbed-half-ball",
        "kappa": -1.0,
        "radius": 1.0,
        "meridian_samples": 16,
        "aperture": None,
        "h_min": None,
        "coefficients": [],
        "cutoff": 0.5,
    },
    "solver": {
        "a": 0.0,
        "p": None,
        "tol": 1e-9,
        "step_tol": 1e-7,
        "max_iter": 400,
        "newton_max_iter": 30,
        "seed_profile": "torsion",
        "morse": True,
    },
    "sweep": {"gap_max": 0.2, "gap_min": 0.01, "p_grid": None, "blowup_factor": 10.0},
    "blowup": {"threshold": None, "n_max": 4, "separation": 4.0, "profile_radius": 4.0, "mu_half": None},
    "greens": {"depths": [0.25, 0.5], "parametrix_depth": 2, "refine": False},
    "halfspace": {"radius": 10.0, "samples": 24},
    "scan": {"kappas": [-1.0, 0.0, 1.0]},
    "output": {"dir": "out", "timestamps": False, "threads": 1, "seed": 0},
    "report": {"ledgers": []},
}

# 要求区域在 0 处有曲率数据的实验
CURVATURE_EXPERIMENTS = ("pohozaev",)


# ---------------------------------------------------------------- 配置


def _merge(config: Dict, values: Optional[Dict], source: str) -> None:
    """把 values 合并进 config；顶层既可以是分节字典，也可以是 section.key 点号键"""
    if not values:
        return
    if not isinstance(values, dict):
        raise ConfigError(f"{source}: 配置顶层必须是映射")
    for key, value in values.items():
        if "." in str(key):
            section, name = str(key).split(".", 1)
            items = {name: value}
        elif isinstance(value, dict):
            section, items = str(key), value
        else:
            raise ConfigError(f"{source}: 键 {key} 既不是分节也不是 section.key 形式")
        if section not in config:
            raise ConfigError(f"{source}: 未知的配置节 {section}")
        for name, item in items.items():
            if name not in config[section]:
                raise ConfigError(f"{source}: 未知的配置项 {section}.{name}")
            config[section][name] = item


def _parse_overrides(pairs: Sequence[str]) -> Dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"覆盖项必须是 section.key=value 形式: {pair}")
        key, value = pair.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def load_config(
    experiment: str,
    path: Optional[str] = None,
    overrides: Optional[Dict] = None,
) -> ExperimentConfig:
    """
    读取并校验实验配置

    优先级：命令行覆盖 > 环境变量 HSLAB_OUT_DIR / HSLAB_THREADS > 配置文件 > 默认值

    Args:
        experiment: 实验名
        path: YAML 配置文件，None 表示只用默认值
        overrides: 点号键到值的映射

    Returns:
        ExperimentConfig；任何非法参数抛出 ConfigError
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"未知的实验: {experiment}，可选 {', '.join(EXPERIMENTS)}")
    config = deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"配置文件 {path} 解析失败: {e}")
        _merge(config, loaded, str(path))

    env = {}
    if os.getenv("HSLAB_OUT_DIR"):
        env["output.dir"] = os.getenv("HSLAB_OUT_DIR")
    if os.getenv("HSLAB_THREADS"):
        env["output.threads"] = os.getenv("HSLAB_THREADS")
    _merge(config, env, "环境变量")
    _merge(config, overrides, "命令行")
    return _validate(experiment, config)


def _number(section: str, name: str, value, kind=float):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{name} 必须是数值，当前为 {value!r}")


def _validate(experiment: str, config: Dict) -> ExperimentConfig:
    geometry = dict(config["geometry"])
    geometry["coefficients"] = tuple(geometry.get("coefficients") or ())
    try:
        domain = DomainSpec(**geometry)
    except (GeometryError, TypeError) as e:
        raise ConfigError(f"区域参数非法: {e}")
    if experiment in CURVATURE_EXPERIMENTS:
        try:
            family = get_family(domain.family)
            family.validate(domain)
            curvature = family.curvature(domain)
        except GeometryError as e:
            raise ConfigError(f"区域参数非法: {e}")
        if curvature is None:
            raise ConfigError(f"{experiment} 需要 0 处的曲率数据，{domain.family} 没有")
    pc = domain.critical_exponent

    solver = dict(config["solver"])
    for name in ("tol", "step_tol"):
        solver[name] = _number("solver", name, solver[name])
        if solver[name] <= 0:
            raise ConfigError(f"solver.{name} 必须为正")
    for name in ("max_iter", "newton_max_iter"):
        solver[name] = _number("solver", name, solver[name], int)
        if solver[name] < 1:
            raise ConfigError(f"solver.{name} 必须 ≥ 1")
    solver["a"] = _number("solver", "a", solver["a"])
    if solver["p"] is not None:
        solver["p"] = _number("solver", "p", solver["p"])
        if not 2.0 < solver["p"] <= pc:
            raise ConfigError(f"solver.p 必须位于 (2, 2⋆={pc:.6g}]")
    if solver["seed_profile"] not in ("torsion", "bump"):
        raise ConfigError(f"solver.seed_profile 只能是 torsion 或 bump")

    sweep = dict(config["sweep"])
    sweep["gap_max"] = _number("sweep", "gap_max", sweep["gap_max"])
    sweep["gap_min"] = _number("sweep", "gap_min", sweep["gap_min"])
    sweep["blowup_factor"] = _number("sweep", "blowup_factor", sweep["blowup_factor"])
    if not 0.0 < sweep["gap_min"] <= sweep["gap_max"] < pc - 2.0:
        raise ConfigError(f"需要 0 < sweep.gap_min ≤ sweep.gap_max < 2⋆ − 2 = {pc - 2.0:.6g}")
    if sweep["p_grid"] is not None:
        grid = [_number("sweep", "p_grid", p) for p in sweep["p_grid"]]
        if not grid or any(b <= a for a, b in zip(grid[:-1], grid[1:])):
            raise ConfigError("sweep.p_grid 必须非空且严格递增")
        if grid[0] <= 2.0 or grid[-1] > pc - sweep["gap_min"] + 1e-12:
            raise ConfigError(f"sweep.p_grid 必须位于 (2, 2⋆ − gap_min]")
        sweep["p_grid"] = grid

    halfspace = dict(config["halfspace"])
    halfspace["radius"] = _number("halfspace", "radius", halfspace["radius"])
    halfspace["samples"] = _number("halfspace", "samples", halfspace["samples"], int)
    if halfspace["radius"] < 10.0:
        raise ConfigError("halfspace.radius 必须 ≥ 10")

    greens = dict(config["greens"])
    greens["depths"] = [_number("greens", "depths", d) for d in greens["depths"]]
    if not greens["depths"] or any(not 0.0 < d < 1.0 for d in greens["depths"]):
        raise ConfigError("greens.depths 必须是 (0, 1) 内的半径比例")
    greens["parametrix_depth"] = _number("greens", "parametrix_depth", greens["parametrix_depth"], int)
    if not 1 <= greens["parametrix_depth"] <= domain.n:
        raise ConfigError(f"greens.parametrix_depth 必须位于 [1, {domain.n}]")
    if greens["parametrix_depth"] >= 3 and domain.n != 3:
        raise ConfigError("greens.parametrix_depth ≥ 3 只支持 n = 3")

    output = dict(config["output"])
    threads = _number("output", "threads", output["threads"], int)
    if threads < 1:
        raise ConfigError("output.threads 必须 ≥ 1")
    out_dir = Path(str(output["dir"]))
    if out_dir.exists() and not os.access(out_dir, os.W_OK):
        raise ConfigError(f"输出目录不可写: {out_dir}")

    return ExperimentConfig(
        experiment=experiment,
        domain=domain,
        solver=solver,
        sweep=sweep,
        blowup=dict(config["blowup"]),
        greens=greens,
        halfspace=halfspace,
        scan={"kappas": [_number("scan", "kappas", k) for k in config["scan"]["kappas"]]},
        report={"ledgers": [str(p) for p in config["report"]["ledgers"]]},
        out_dir=str(out_dir),
        threads=threads,
        seed=_number("output", "seed", output["seed"], int),
        timestamps=bool(output["timestamps"]),
    )


# ---------------------------------------------------------------- 报告


def report(ledger_paths: Sequence) -> List[Dict]:
    """
    多个账本的曲率区间对比表，只读账本、不重新计算

    每个账本取最后一条记录：H(0)、sup 范数趋势、气泡个数、μ 趋势。
    """
    if not ledger_paths:
        raise ConfigError("report 至少需要一个账本")
    missing = [str(p) for p in ledger_paths if not Path(p).exists()]
    if missing:
        raise ConfigError(f"账本文件不存在: {', '.join(missing)}")
    rows = []
    for path in ledger_paths:
        records = read_ledger(path)
        if not records:
            raise ConfigError(f"账本为空: {path}")
        last = records[-1]
        outputs = last.get("outputs", {})
        rows.append({
            "ledger": str(path),
            "experiment": last.get("experiment"),
            "mean_curvature": outputs.get("mean_curvature"),
            "sup_trend": outputs.get("sup_ratio"),
            "bubble_count": outputs.get("bubble_count"),
            "mu_trend": outputs.get("mu_trend"),
        })
    return rows


# ---------------------------------------------------------------- 实验

# 飞书摘要里展示的结果项
HEADLINE_KEYS = ("p", "mu", "mu_half", "sup_ratio", "mu_trend", "bubble_count", "mean_curvature", "num_nodes")


def headline(outputs: Dict) -> Dict[str, str]:
    out = {}
    for key in HEADLINE_KEYS:
        value = outputs.get(key)
        if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
            out[key] = f"{float(value):.6g}"
    return out


class Lab:
    """实验执行器"""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.config_hash = digest(config.identity())
        self.out = Path(config.out_dir) / f"{config.experiment}_{self.config_hash[:12]}"
        self.notifier = FeishuNotifier(history_file=str(Path(config.out_dir) / "feishu_sent_history.txt"))

    # ---- 公共部件

    def _domain(self, spec: Optional[DomainSpec] = None):
        from geometry import make_domain

        return make_domain(spec or self.config.domain, verbose=True)

    def _problem(self, mesh, p: float) -> SubcriticalProblem:
        solver = self.config.solver
        return SubcriticalProblem(
            mesh=mesh,
            s=mesh.spec.s,
            p=p,
            a=solver["a"],
            tol=solver["tol"],
            step_tol=solver["step_tol"],
            max_iter=solver["max_iter"],
            newton_max_iter=solver["newton_max_iter"],
            seed=solver["seed_profile"],
        )

    def _grid(self) -> Tuple[float, ...]:
        from solver import geometric_p_grid

        sweep = self.config.sweep
        if sweep["p_grid"] is not None:
            return tuple(sweep["p_grid"])
        return geometric_p_grid(self.config.domain.n, self.config.domain.s, sweep["gap_max"], sweep["gap_min"])

    def _sweep(self):
        from solver import continue_to_critical

        mesh, chart, curv = self._domain()
        grid = self._grid()
        problem = self._problem(mesh, grid[0])
        trace = continue_to_critical(
            problem, grid, gap_min=self.config.sweep["gap_min"], blowup_factor=self.config.sweep["blowup_factor"]
        )
        return mesh, chart, curv, trace

    def _decompose(self, mesh, chart, record, profiles: bool):
        from blowup import extract_scales

        cfg = self.config.blowup
        return extract_scales(
            mesh,
            record.result.solution,
            record.gap,
            chart=chart,
            threshold=cfg["threshold"],
            a=self.config.solver["a"],
            separation=float(cfg["separation"]),
            n_max=int(cfg["n_max"]),
            profile_radius=float(cfg["profile_radius"]),
            profiles=profiles,
        )

    @staticmethod
    def _sweep_summary(trace, curv) -> Dict:
        ok = [r for r in trace.records if not r.failed]
        return {
            "rows": [{k: v for k, v in r.row().items()} for r in trace.records],
            "sup_ratio": trace.sup_ratio(),
            "mu_trend": ok[-1].mu / ok[0].mu if len(ok) >= 2 else None,
            "bubble_count": ok[-1].bubble_count if ok else None,
            "mean_curvature": None if curv is None else curv.mean_curvature_trace,
            "failed": sum(r.failed for r in trace.records),
        }

    # ---- 各实验

    def solve(self) -> Dict:
        from geometry import export_mesh
        from solver import minimize_quotient, morse_count

        mesh, _, curv = self._domain()
        spec = mesh.spec
        p = self.config.solver["p"] or spec.critical_exponent - self.config.sweep["gap_max"]
        result = minimize_quotient(self._problem(mesh, p), verbose=True)
        if not result.converged:
            raise ConvergenceError(f"p={p:.6g} 的极小化未收敛 (残差 {result.residual:.2e})", best=result.solution)
        if not result.positive:
            raise InvariantViolation("极值函数不是正的")
        outputs = {
            "p": p,
            "mu": result.mu,
            "residual": result.residual,
            "iterations": result.iterations,
            "energy": result.energy,
            "sup_norm": result.sup_norm,
            "nehari_level": result.nehari_level,
            "num_nodes": mesh.num_nodes,
            "h": mesh.h,
            "mean_curvature": None if curv is None else curv.mean_curvature_trace,
        }
        if self.config.solver["morse"]:
            spectrum = morse_count(mesh, result.solution, p, spec.s, self.config.solver["a"], seed=self.config.seed)
            outputs["eigenvalues"] = spectrum.eigenvalues
            outputs["nonpositive_count"] = spectrum.nonpositive_count
            outputs["li_yau_ratio"] = spectrum.li_yau_ratio
        export_mesh(mesh, self.out / "solution.mesh", result.solution)
        return outputs

    def sweep(self) -> Dict:
        mesh, chart, curv, trace = self._sweep()
        summary = self._sweep_summary(trace, curv)
        plots.write_csv(self.out / "sweep.csv", "sweep", summary["rows"])

        envelope = []
        for record in trace.records:
            if record.failed or record.result is None:
                continue
            try:
                decomposition = self._decompose(mesh, chart, record, profiles=False)
                envelope.append({"p": record.p, "gap": record.gap, "C_co": decomposition.C_co, "C_c1": decomposition.C_c1})
            except Exception as e:
                print(f"[失败] p={record.p:.6g} 包络拟合: {e}")
        plots.write_csv(self.out / "envelope.csv", "envelope", envelope)

        ok = [r for r in trace.records if not r.failed]
        gaps = [r.gap for r in ok]
        plots.line_plot(self.out / "mu_vs_gap.svg", gaps, {"μ": [r.mu for r in ok]}, "2⋆ − p", "μ_{s,p}", logx=True)
        plots.line_plot(
            self.out / "sup_vs_gap.svg", gaps, {"sup|u|": [r.sup_norm for r in ok]}, "2⋆ − p", "sup", logx=True, logy=True
        )
        if envelope:
            plots.line_plot(
                self.out / "envelope_vs_gap.svg",
                [row["gap"] for row in envelope],
                {"C_co": [row["C_co"] for row in envelope], "C_c1": [row["C_c1"] for row in envelope]},
                "2⋆ − p",
                "C",
                logx=True,
            )
        summary["envelope"] = envelope
        return summary

    def pohozaev(self) -> Dict:
        from pohozaev import ratio_prediction

        mesh, chart, curv, trace = self._sweep()
        if curv is None:
            raise ConfigError(f"{mesh.spec.family} 没有 0 处的曲率数据，无法预测 Pohozaev 比")
        rows = []
        for record in trace.records:
            if record.failed or record.result is None or record.bubble_count == 0:
                continue
            try:
                decomposition = self._decompose(mesh, chart, record, profiles=True)
                prediction = ratio_prediction(decomposition, curv)
                rows.append({
                    "p": record.p,
                    "gap": record.gap,
                    "measured": prediction.measured,
                    "general": prediction.general,
                    "mean_curvature": prediction.mean_curvature,
                    "bubble_count": decomposition.count,
                })
            except Exception as e:
                print(f"[失败] p={record.p:.6g} Pohozaev 比: {e}")
        plots.write_csv(self.out / "pohozaev.csv", "pohozaev", rows)
        if rows:
            plots.line_plot(
                self.out / "pohozaev_ratio.svg",
                [row["gap"] for row in rows],
                {
                    "measured": [row["measured"] for row in rows],
                    "general": [row["general"] for row in rows],
                    "mean curvature": [row["mean_curvature"] for row in rows],
                },
                "2⋆ − p",
                "p_ε / μ_N",
                logx=True,
            )
        summary = self._sweep_summary(trace, curv)
        summary["ratios"] = rows
        return summary

    def blowup(self) -> Dict:
        from blowup import energy_quantization
        from halfspace import solve_halfspace

        mesh, chart, curv, trace = self._sweep()
        ok = [r for r in trace.records if not r.failed and r.result is not None]
        if not ok:
            raise ConvergenceError("延拓中没有收敛的点")
        last = ok[-1]
        decomposition = self._decompose(mesh, chart, last, profiles=True)
        mu_half = self.config.blowup["mu_half"]
        if mu_half is None:
            spec = self.config.domain
            mu_half = solve_halfspace(
                spec.n, spec.s, self.config.halfspace["radius"], self.config.halfspace["samples"], verbose=True
            ).mu_estimate
        quantization = energy_quantization(mesh, last.result.solution, decomposition, float(mu_half))
        print(
            f"[爆破] {decomposition.count} 个气泡, 能量差 {quantization.gap:.4g}, "
            f"每个气泡高于下界: {quantization.each_above_bound}"
        )
        summary = self._sweep_summary(trace, curv)
        summary.update({
            "p": last.p,
            "scales": [asdict(scale) for scale in decomposition.scales],
            "bubble_energies": quantization.bubbles,
            "total_energy": quantization.total,
            "weak_limit_energy": quantization.weak_limit,
            "energy_gap": quantization.gap,
            "lower_bound": quantization.lower_bound,
            "each_above_bound": quantization.each_above_bound,
            "count_ok": quantization.count_ok,
            "residual_sup": decomposition.residual_sup,
            "C_co": decomposition.C_co,
            "C_c1": decomposition.C_c1,
            "mu_half": mu_half,
        })
        return summary

    def _green_kernels(self, mesh):
        from discretize import assemble, factor
        from greens import greens_solve, nearest_axis_node

        a = self.config.solver["a"]
        op = assemble(mesh, a, verbose=True)
        factor(op)
        poles = sorted({nearest_axis_node(mesh, d * mesh.spec.radius) for d in self.config.greens["depths"]})
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            kernels = list(pool.map(lambda pole: greens_solve(mesh, a, pole, op), poles))
        for i, gi in enumerate(kernels):
            for gj in kernels[i + 1:]:
                scale = max(np.max(np.abs(gi.values)), np.max(np.abs(gj.values)))
                if abs(gi.values[gj.pole] - gj.values[gi.pole]) > 1e-10 * scale:
                    raise InvariantViolation(f"离散格林函数不对称: 极点 {gi.pole}, {gj.pole}")
        return op, kernels

    def greens(self) -> Dict:
        from geometry import refine
        from greens import boundary_kernel, estimate_constants, parametrix_terms

        mesh, _, _ = self._domain()
        op, kernels = self._green_kernels(mesh)
        constants = [estimate_constants(kernels)]
        if self.config.greens["refine"]:
            _, fine = self._green_kernels(refine(mesh))
            constants.append(estimate_constants(fine))
        for c in constants:
            print(f"[格林] h={c.h:.4g}: G5={c.g5:.4g} G6={c.g6:.4g} G7={c.g7:.4g} G8={c.g8:.4g}")
        plots.write_csv(self.out / "greens.csv", "greens", [asdict(c) for c in constants])

        a = self.config.solver["a"]
        kernel = boundary_kernel(mesh, a, op=op)
        terms = parametrix_terms(a, mesh, self.config.greens["parametrix_depth"])
        for term in terms:
            print(
                f"[格林] Γ_{term.order}: 拟合指数 {term.fitted_exponent:.3f}, "
                f"目标 {term.target_exponent:.3f}, 界成立: {term.bound_holds}"
            )
        return {
            "poles": [k.pole for k in kernels],
            "reproduction_error": [k.reproduction_error for k in kernels],
            "constants": [asdict(c) for c in constants],
            "boundary_lower": kernel.lower,
            "boundary_upper": kernel.upper,
            "boundary_grad_lower": kernel.grad_lower,
            "boundary_grad_upper": kernel.grad_upper,
            "rigidity_alpha": kernel.rigidity_alpha,
            "rigidity_residual": kernel.rigidity_residual,
            "parametrix": [
                {
                    "order": t.order,
                    "fitted_exponent": t.fitted_exponent,
                    "target_exponent": t.target_exponent,
                    "bound_constant": t.bound_constant,
                    "bound_holds": t.bound_holds,
                }
                for t in terms
            ],
        }

    def halfspace(self) -> Dict:
        from geometry import export_mesh
        from halfspace import (
            hopf_check,
            kelvin_round_trip,
            kelvin_transform,
            reflection_symmetry_check,
            solve_halfspace,
        )

        spec = self.config.domain
        bubble = solve_halfspace(
            spec.n, spec.s, self.config.halfspace["radius"], self.config.halfspace["samples"], verbose=True
        )
        image = kelvin_transform(bubble, verbose=True)
        hopf_ok, hopf_min = hopf_check(image)
        deviation, bound = kelvin_round_trip(bubble, image)
        symmetry = reflection_symmetry_check(image)
        export_mesh(bubble.mesh, self.out / "bubble.mesh", bubble.values)
        export_mesh(image.mesh, self.out / "kelvin.mesh", image.values)
        pc = spec.critical_exponent
        return {
            "mu_estimate": bubble.mu_estimate,
            "energy": bubble.energy,
            "energy_from_mu": bubble.mu_estimate ** (pc / (pc - 2.0)),
            "decay_exponent": bubble.decay_exponent,
            "peak": bubble.peak,
            "radius": bubble.radius,
            "pde_residual": image.pde_residual,
            "hopf_ok": hopf_ok,
            "hopf_min": hopf_min,
            "hole_radius": image.hole_radius,
            "round_trip_deviation": deviation,
            "round_trip_bound": bound,
            "reflection_deviation": symmetry,
        }

    def _scan_point(self, spec: DomainSpec, p: float):
        from solver import minimize_quotient

        mesh, _, curv = self._domain(spec)
        result = minimize_quotient(self._problem(mesh, p))
        return result.mu, None if curv is None else curv.mean_curvature_trace

    def scan(self) -> Dict:
        spec = self.config.domain
        p = spec.critical_exponent - self.config.sweep["gap_min"]
        flat = replace(spec, family="perturbed-half-ball", kappa=0.0, coefficients=(), aperture=None)
        specs = [flat] + [replace(spec, kappa=k) for k in self.config.scan["kappas"]]
        print(f"[实验] 曲率扫描: {len(specs) - 1} 个 κ, p={p:.6g}, {self.config.threads} 个线程")
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            futures = [pool.submit(self._scan_point, s, p) for s in specs]
            results = []
            for s, future in zip(specs, futures):
                try:
                    results.append(future.result())
                except Exception as e:
                    print(f"[失败] κ={s.kappa}: {e}")
                    results.append(None)
        if results[0] is None:
            raise ConvergenceError("平坦参照区域求解失败")
        mu_half = results[0][0]
        rows = []
        for s, result in zip(specs[1:], results[1:]):
            if result is None:
                continue
            mu, H = result
            rows.append({"kappa": s.kappa, "mean_curvature": H, "mu": mu, "mu_half": mu_half, "below_half": mu < mu_half})
        plots.write_csv(self.out / "scan.csv", "scan", rows)
        if rows:
            plots.line_plot(
                self.out / "scan.svg",
                [row["kappa"] for row in rows],
                {"μ(Ω_κ)": [row["mu"] for row in rows], "μ flat": [mu_half] * len(rows)},
                "κ",
                "μ_{s,p}",
            )
        return {"p": p, "mu_half": mu_half, "rows": rows}

    def report(self) -> Dict:
        rows = report(self.config.report["ledgers"])
        plots.write_csv(self.out / "report.csv", "report", rows)
        trend = [row for row in rows if row["sup_trend"] is not None]
        if trend:
            plots.line_plot(
                self.out / "report.svg",
                list(range(1, len(trend) + 1)),
                {"sup 趋势": [row["sup_trend"] for row in trend]},
                "账本",
                "sup 末/首",
                logy=True,
            )
        return {"rows": rows}

    def export_mesh(self) -> Dict:
        from geometry import export_mesh

        mesh, _, _ = self._domain()
        path = export_mesh(mesh, self.out / "mesh.txt")
        return {"num_nodes": mesh.num_nodes, "num_cells": len(mesh.cells), "h": mesh.h, "path": path.name}

    # ---- 入口

    def run(self) -> Dict:
        """执行实验并写账本；返回账本记录"""
        print("=" * 80)
        print(f"[实验] {self.config.experiment} 配置哈希 {self.config_hash[:12]} 输出 {self.out}")
        print("=" * 80)
        self.out.mkdir(parents=True, exist_ok=True)
        handler = getattr(self, self.config.experiment.replace("-", "_"))
        outputs = handler()
        ledger = RunLedger(self.out / "ledger.jsonl", timestamps=self.config.timestamps)
        record = ledger.append(self.config.experiment, self.config_hash, outputs)
        try:
            self.notifier.notify({
                "experiment": self.config.experiment,
                "status": "ok",
                "config_hash": self.config_hash,
                "output_hash": record["output_hash"],
                "out_dir": str(self.out),
                "headline": headline(outputs),
            })
        except Exception as e:
            print(f"[失败] 飞书推送: {e}")
        return record


def run(config: ExperimentConfig) -> Tuple[int, Optional[Dict]]:
    """
    运行一次实验

    Returns:
        (退出码, 账本记录)；失败时记录为 None
    """
    try:
        return 0, Lab(config).run()
    except HslabError as e:
        print(f"[错误] {type(e).__name__}: {e}")
        return e.exit_code, None
    except ValueError as e:
        # 数值例程的前置条件检查，按配置错误处理
        print(f"[错误] 参数不合法: {e}")
        return ConfigError.exit_code, None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hslab", description="边界奇异 Hardy–Sobolev 问题的数值实验")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("ledgers", nargs="*", help="report 使用的账本文件")
    parser.add_argument("--config", default=None, help="YAML 配置文件")
    parser.add_argument("--out", default=None, help="输出目录，覆盖 output.dir")
    parser.add_argument("--threads", type=int, default=None, help="工作线程数")
    parser.add_argument("--seed", type=int, default=None, help="随机种子")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="覆盖单个配置项")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """主入口"""
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_overrides(args.set)
        if args.out is not None:
            overrides["output.dir"] = args.out
        if args.threads is not None:
            overrides["output.threads"] = args.threads
        if args.seed is not None:
            overrides["output.seed"] = args.seed
        if args.ledgers:
            overrides["report.ledgers"] = list(args.ledgers)
        config = load_config(args.experiment, args.config, overrides)
    except HslabError as e:
        print(f"[错误] 配置无效: {e}")
        return e.exit_code
    code, _ = run(config)
    return code


if __name__ == "__main__":
    sys.exit(main())
