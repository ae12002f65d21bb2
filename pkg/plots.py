"""
CSV 表与 SVG 图

CSV 第一行是 `# schema=<版本> table=<表名>` 注释，列定义见 docs/csv_schema.md。
SVG 用 matplotlib 的 Agg 后端输出，固定 hashsalt 且不写日期，相同数据得到相同文件。
"""

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence
import csv
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

CSV_SCHEMA_VERSION = 1

TABLES: Dict[str, Sequence[str]] = {
    "sweep": ("p", "gap", "mu", "sup_norm", "energy", "pohozaev_defect", "bubble_count", "smallest_scale", "blowup", "failed"),
    "pohozaev": ("p", "gap", "measured", "general", "mean_curvature", "bubble_count"),
    "envelope": ("p", "gap", "C_co", "C_c1"),
    "greens": ("h", "g5", "g6", "g7", "g8"),
    "scan": ("kappa", "mean_curvature", "mu", "mu_half", "below_half"),
    "report": ("ledger", "experiment", "mean_curvature", "sup_trend", "bubble_count", "mu_trend"),
}


def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return "" if not math.isfinite(value) else repr(value)
    return value


def write_csv(path, table: str, rows: Iterable[dict]) -> Path:
    """按 TABLES 中的列顺序写 CSV，缺失列留空"""
    if table not in TABLES:
        raise ValueError(f"未知的表: {table}")
    columns = TABLES[table]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# schema={CSV_SCHEMA_VERSION} table={table}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])
    return path


def read_csv(path) -> List[dict]:
    """读取 write_csv 写出的表，跳过注释行；数值列转成 float"""
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        parsed = {}
        for key, value in row.items():
            try:
                parsed[key] = float(value)
            except (TypeError, ValueError):
                parsed[key] = value
        out.append(parsed)
    return out


def line_plot(
    path,
    x: Sequence[float],
    series: Dict[str, Sequence[float]],
    xlabel: str,
    ylabel: str,
    logx: bool = False,
    logy: bool = False,
    title: Optional[str] = None,
) -> Path:
    """多条折线的 SVG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": "hslab", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, values in series.items():
            ax.plot(x, values, marker="o", label=label)
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
