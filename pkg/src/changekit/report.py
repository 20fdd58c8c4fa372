"""Render run artifacts into delimited tables and figures.

The report path reads what training and evaluation wrote to disk (ledger CSV
files, evaluation report JSON, dumped masks) and produces comma-separated
summaries next to PNG figures: loss curves per epoch, F1 against corruption
severity per corruption kind, and side-by-side mask comparison panels.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import CORRUPTION_KINDS, EvalReport
from .pipeline import RunLedger


def render_loss_curves(ledger: RunLedger, out_path: Path) -> Path:
    epochs = [r["epoch"] for r in ledger.rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(epochs, [r["total"] for r in ledger.rows], label="total", color="k")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].set_title("total loss")
    for key, label in (("l_ssl", "correlation"), ("l_ip", "invariance"), ("l_cr", "consistency")):
        series = [r[key] for r in ledger.rows]
        if any(v != 0.0 for v in series):
            axes[1].plot(epochs, series, label=label)
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("loss")
    axes[1].set_title("components")
    if axes[1].lines:
        axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_corruption_curves(report: EvalReport, out_path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    severities = sorted({s for _, s in report.corruption_grid})
    for kind in CORRUPTION_KINDS:
        ys = [report.corruption_grid.get((kind, s)) for s in severities]
        if any(y is not None for y in ys):
            ax.plot(severities, ys, marker="o", label=kind)
    ax.axhline(report.f1, color="k", linestyle="--", linewidth=1, label="clean")
    if report.mpc is not None:
        ax.axhline(report.mpc, color="gray", linestyle=":", linewidth=1, label="mean corrupted")
    ax.set_xlabel("severity")
    ax.set_ylabel("F1")
    ax.set_ylim(0.0, 1.05)
    ax.set_xticks(severities)
    ax.legend(fontsize=7, ncol=2)
    ax.set_title("performance under corruption")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def render_mask_panels(mask_dir: Path, out_path: Path, limit: int = 4) -> Path | None:
    """Side-by-side (t0, t1, ground truth, prediction) panels from dumped masks."""
    from PIL import Image

    mask_dir = Path(mask_dir)
    stems = sorted({p.name[: -len("_pred.png")] for p in mask_dir.glob("*_pred.png")})[:limit]
    if not stems:
        return None
    fig, axes = plt.subplots(len(stems), 4, figsize=(8, 2.1 * len(stems)), squeeze=False)
    titles = ("t0", "t1", "ground truth", "prediction")
    for row, stem in enumerate(stems):
        panels = (
            mask_dir / f"{stem}_t0.png",
            mask_dir / f"{stem}_t1.png",
            mask_dir / f"{stem}_gt.png",
            mask_dir / f"{stem}_pred.png",
        )
        for col, path in enumerate(panels):
            with Image.open(path) as im:
                axes[row][col].imshow(np.asarray(im), cmap="gray", vmin=0, vmax=255)
            axes[row][col].set_axis_off()
            if row == 0:
                axes[row][col].set_title(titles[col], fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def summary_csv(reports: dict[str, EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["distribution", "precision", "recall", "f1", "f1_percent", "mpc", "rpc"])
    for tag in sorted(reports):
        r = reports[tag]
        writer.writerow(
            [
                tag,
                f"{r.precision:.6f}",
                f"{r.recall:.6f}",
                f"{r.f1:.6f}",
                f"{100 * r.f1:.4f}",
                "" if r.mpc is None else f"{r.mpc:.6f}",
                "" if r.rpc is None else f"{r.rpc:.6f}",
            ]
        )
    return buf.getvalue()


def generate_report(run_dir: Path, out_dir: Path | None = None) -> list[Path]:
    """Collect every known artifact under ``run_dir`` into tables and figures."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    reports = {}
    for path in sorted(run_dir.glob("*report*.json")):
        rep = EvalReport.from_json(path.read_text())
        tag = rep.metadata.get("distribution", path.stem)
        reports[tag] = rep
        if rep.corruption_grid:
            grid_csv = out_dir / f"{path.stem}_grid.csv"
            grid_csv.write_text(rep.grid_csv())
            written.append(grid_csv)
            fig = render_corruption_curves(rep, out_dir / f"{path.stem}_severity.png")
            written.append(fig)
    if reports:
        summary = out_dir / "summary.csv"
        summary.write_text(summary_csv(reports))
        written.append(summary)

    for path in sorted(run_dir.glob("*ledger*.csv")):
        ledger = RunLedger.from_csv(path.read_text())
        if ledger.rows:
            fig = render_loss_curves(ledger, out_dir / f"{path.stem}_curves.png")
            written.append(fig)

    masks = run_dir / "masks"
    if masks.is_dir():
        panel = render_mask_panels(masks, out_dir / "mask_panels.png")
        if panel is not None:
            written.append(panel)
    return written
