"""Tables and plots emitted from finished runs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ClearskyError


class MissingReportError(ClearskyError):
    pass


def load_report(run_dir: Path | str) -> dict:
    path = Path(run_dir) / "report.json"
    if not path.exists():
        raise MissingReportError(f"no report.json in {run_dir}")
    return json.loads(path.read_text())


def final_boundary_rows(report: dict) -> list:
    last = max(r["trained_through_task"] for r in report["rows"])
    return [r for r in report["rows"] if r["trained_through_task"] == last]


def comparison_table(run_dirs, labels=None) -> list:
    """One row per run: average + per-task PSNR/SSIM at the final boundary."""
    table = []
    for i, run in enumerate(run_dirs):
        rep = load_report(run)
        rows = final_boundary_rows(rep)
        last = rows[0]["trained_through_task"]
        avg = next(a for a in rep["averages"] if a["trained_through_task"] == last)
        entry = {"run": labels[i] if labels else Path(run).name,
                 "avg_psnr_db": avg["psnr_db"], "avg_ssim": avg["ssim"]}
        for r in rows:
            entry[f"task{r['eval_task']}_psnr_db"] = r["psnr_db"]
            entry[f"task{r['eval_task']}_ssim"] = r["ssim"]
        table.append(entry)
    return table


def write_comparison_csv(table: list, path: Path | str) -> None:
    keys = sorted({k for row in table for k in row}, key=lambda k: (k != "run", k))
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for row in table:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                        for k, v in row.items()})


def write_metric_table(report: dict, path: Path | str) -> None:
    """Per-boundary table: one column per evaluated task plus the average."""
    boundaries = sorted({r["trained_through_task"] for r in report["rows"]})
    tasks = sorted({r["eval_task"] for r in report["rows"]})
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["trained_through_task", "avg_psnr_db", "avg_ssim"]
                   + [f"task{k}_psnr_db" for k in tasks]
                   + [f"task{k}_ssim" for k in tasks])
        for t in boundaries:
            avg = next(a for a in report["averages"]
                       if a["trained_through_task"] == t)
            by_task = {r["eval_task"]: r for r in report["rows"]
                       if r["trained_through_task"] == t}
            row = [t, f"{avg['psnr_db']:.6f}", f"{avg['ssim']:.6f}"]
            row += [f"{by_task[k]['psnr_db']:.6f}" if k in by_task else ""
                    for k in tasks]
            row += [f"{by_task[k]['ssim']:.6f}" if k in by_task else ""
                    for k in tasks]
            w.writerow(row)


def plot_metric_vs_task(report: dict, path: Path | str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    tasks = sorted({r["eval_task"] for r in report["rows"]})
    for k in tasks:
        pts = [(r["trained_through_task"], r["psnr_db"])
               for r in report["rows"] if r["eval_task"] == k]
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"task {k}")
    ax.set_xlabel("trained through task")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_curves(runlog_path: Path | str, out_path: Path | str) -> None:
    steps, series = [], {"l_sw": [], "l_kd": [], "l_pkd": [], "total": []}
    with open(runlog_path) as f:
        reader = csv.DictReader(f)
        for i, row in enumerate(reader):
            steps.append(i)
            for k in series:
                series[k].append(float(row[k]))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for k, vals in series.items():
        ax.plot(steps, vals, label=k, linewidth=0.8)
    ax.set_xlabel("global step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def emit(run_dirs, out_dir: Path | str, labels=None) -> list:
    """Write tables and plots for one or more runs; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for run in run_dirs:
        run = Path(run)
        rep = load_report(run)
        name = run.name
        table_path = out / f"{name}_metrics.csv"
        write_metric_table(rep, table_path)
        written.append(table_path)
        plot_path = out / "plots" / f"{name}_psnr_vs_task.png"
        plot_path.parent.mkdir(exist_ok=True)
        plot_metric_vs_task(rep, plot_path)
        written.append(plot_path)
        runlog = run / "runlog.csv"
        if runlog.exists():
            loss_path = out / "plots" / f"{name}_loss_vs_step.png"
            plot_loss_curves(runlog, loss_path)
            written.append(loss_path)
    if len(run_dirs) > 1:
        cmp_path = out / "comparison.csv"
        write_comparison_csv(comparison_table(run_dirs, labels), cmp_path)
        written.append(cmp_path)
    return written
