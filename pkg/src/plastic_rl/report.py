"""Post-processing of run logs into CSV tables and SVG figures.

Three report kinds: performance profiles (with simultaneous confidence
bands), interquartile-mean learning curves (with bootstrap bands), and
per-layer plasticity diagnostics.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import stats
from .runlog import RunLog, read_runlog
from .svgplot import Series, line_plot


def load_logs(paths) -> list[RunLog]:
    logs = [read_runlog(p) for p in sorted(str(p) for p in paths)]
    if not logs:
        raise ValueError("no run logs to report on")
    return logs


def by_algorithm(logs) -> dict[str, list[RunLog]]:
    grouped: dict[str, list[RunLog]] = defaultdict(list)
    for log in logs:
        grouped[log.header["name"]].append(log)
    return dict(sorted(grouped.items()))


def task_scores(log: RunLog) -> list[stats.TaskScore]:
    """One summary score per task: mean of the evaluation success rates
    recorded while that task was active."""
    per_task: dict[int, list[float]] = defaultdict(list)
    for rec in log.records:
        if rec["kind"] == "eval":
            per_task[rec["task"]].append(rec["success_rate"])
    seed = log.header["seed"]
    name = log.header["name"]
    return [
        stats.TaskScore(f"{name}-seed{seed}", seed, task, float(np.mean(vals)))
        for task, vals in sorted(per_task.items())
    ]


def algorithm_scores(logs) -> dict[str, list[stats.TaskScore]]:
    return {
        name: [s for log in group for s in task_scores(log)]
        for name, group in by_algorithm(logs).items()
    }


def profile_report(logs, out_dir, alpha: float = 0.1) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "profile.csv"
    svg_path = out_dir / "profile.svg"
    series = []
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "value", "ci_lo", "ci_hi", "algorithm"])
        for name, scores in algorithm_scores(logs).items():
            curve = stats.performance_profile(scores, alpha=alpha)
            for t, v, lo, hi in zip(curve.thresholds, curve.values, curve.lo,
                                    curve.hi):
                writer.writerow([f"{t:.2f}", repr(float(v)), repr(float(lo)),
                                 repr(float(hi)), name])
            series.append(Series(curve.thresholds, curve.values, label=name,
                                 band=(curve.lo, curve.hi)))
    line_plot(svg_path, series, title="Performance profiles",
              xlabel="success-rate threshold", ylabel="fraction of tasks above",
              ylim=(0.0, 1.0))
    return [csv_path, svg_path]


def _eval_series(group) -> tuple[np.ndarray, np.ndarray]:
    """Aligned per-run success-rate series on the common evaluation grid."""
    runs = []
    grid = None
    for log in group:
        evals = [(r["step"], r["success_rate"]) for r in log.records
                 if r["kind"] == "eval"]
        steps = [s for s, _ in evals]
        if grid is None:
            grid = steps
        elif steps != grid:
            raise ValueError(
                f"{log.path}: evaluation grid differs from other runs; "
                "curves need aligned series")
        runs.append([v for _, v in evals])
    return np.array(grid, dtype=float), np.array(runs, dtype=float)


def curves_report(logs, out_dir, window: int = 5, alpha: float = 0.1,
                  resamples: int = 1000) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "curves.csv"
    svg_path = out_dir / "curves.svg"
    series = []
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "value", "ci_lo", "ci_hi", "algorithm"])
        for name, group in by_algorithm(logs).items():
            grid, runs = _eval_series(group)
            curve = stats.iqm_curve(runs, window=window)
            lo, hi = stats.bootstrap_iqm_band(
                runs, window=window, resamples=resamples, alpha=alpha,
                rng=np.random.default_rng(0))
            for s, v, l, h in zip(grid, curve, lo, hi):
                writer.writerow([int(s), repr(float(v)), repr(float(l)),
                                 repr(float(h)), name])
            series.append(Series(grid, curve, label=name, band=(lo, hi)))
    line_plot(svg_path, series, title=f"IQM success rate (window {window})",
              xlabel="environment steps", ylabel="success rate",
              ylim=(0.0, 1.0))
    return [csv_path, svg_path]


def diagnostics_report(logs, out_dir) -> list[Path]:
    """Per-layer stable rank and cosine similarity, averaged over seeds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in ("stable_rank", "cosine_sim"):
        csv_path = out_dir / f"diag_{metric}.csv"
        rows = []
        plots: dict[str, list[Series]] = {"actor": [], "critic": []}
        for name, group in by_algorithm(logs).items():
            collected: dict[tuple, dict[int, list[float]]] = defaultdict(
                lambda: defaultdict(list))
            for log in group:
                for rec in log.records:
                    if rec["kind"] != "diag":
                        continue
                    for net_tag in ("actor", "critic"):
                        for li, value in enumerate(rec[f"{net_tag}_{metric}"]):
                            collected[(net_tag, li)][rec["step"]].append(value)
            for (net_tag, li), per_step in sorted(collected.items()):
                steps = sorted(per_step)
                means = [float(np.mean(per_step[s])) for s in steps]
                for s, v in zip(steps, means):
                    rows.append([int(s), repr(v), name, net_tag, li + 1])
                plots[net_tag].append(Series(steps, means,
                                             label=f"{name} L{li + 1}"))
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "value", "algorithm", "net", "layer"])
            writer.writerows(rows)
        written.append(csv_path)
        for net_tag, series in plots.items():
            if not series:
                continue
            svg_path = out_dir / f"diag_{metric}_{net_tag}.svg"
            line_plot(svg_path, series, title=f"{net_tag} {metric}",
                      xlabel="environment steps", ylabel=metric)
            written.append(svg_path)
    return written
