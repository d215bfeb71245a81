"""Figure and table rendering for evaluation artifacts.

Renders ROC curves and training progress to PNG/SVG next to the delimited
outputs, and joins end-to-end vs feature-based reports into a side-by-side
comparison (JSON + Markdown + CSV).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import RocCurve

_STYLE = {
    "figure.figsize": (6.0, 4.5),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
    "legend.fontsize": 9,
    "svg.hashsalt": "tbscreen",  # deterministic SVG element ids
}


def _save(fig, out_base: Path, formats=("png", "svg")) -> list[str]:
    written = []
    for fmt in formats:
        path = out_base.with_suffix(f".{fmt}")
        # Date metadata suppressed so reruns are byte-identical
        fig.savefig(path, format=fmt, metadata={"Date": None} if fmt == "svg" else None)
        written.append(str(path))
    plt.close(fig)
    return written


def roc_figure(curves: dict[str, RocCurve], out_base: str | Path, aucs: dict[str, float] | None = None) -> list[str]:
    """One ROC plot, one line per named model, chance diagonal for reference."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for name, curve in curves.items():
            label = name
            if aucs and name in aucs:
                label = f"{name} (AUC {aucs[name]:.4f})"
            ax.plot(curve.fpr, curve.tpr, marker=".", markersize=3, label=label)
        ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1, label="chance")
        ax.set_xlabel("false positive rate (1 - specificity)")
        ax.set_ylabel("true positive rate (sensitivity)")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        ax.set_title("ROC")
        return _save(fig, Path(out_base))


def training_figure(per_epoch: list[dict], out_base: str | Path) -> list[str]:
    """Mean train loss and validation accuracy against epoch."""
    epochs = [e["epoch"] for e in per_epoch]
    losses = [e["mean_train_loss"] for e in per_epoch]
    accs = [e["val_accuracy"] for e in per_epoch]
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
        ax1.plot(epochs, losses, marker="o", markersize=3)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("mean train loss")
        ax2.plot(epochs, accs, marker="o", markersize=3, color="tab:green")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("validation accuracy")
        ax2.set_ylim(0, 1.02)
        fig.tight_layout()
        return _save(fig, Path(out_base))


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100.0 * x:.2f}"


def comparison_report(end_to_end: dict[str, dict], feature_based: dict[str, dict]) -> dict:
    """Join per-backbone evaluation reports from both arms.

    Both runs must have scored the identical test split (hash check) for
    the comparison to be meaningful.
    """
    backbones = sorted(set(end_to_end) | set(feature_based))
    rows = []
    for name in backbones:
        e2e = end_to_end.get(name)
        fb = feature_based.get(name)
        if e2e and fb:
            h1, h2 = e2e.get("split_hash"), fb.get("split_hash")
            if h1 and h2 and h1 != h2:
                raise ValueError(f"split hash mismatch for {name}: the two arms scored different test sets")
        rows.append(
            {
                "backbone": name,
                "end_to_end": _arm_summary(e2e),
                "feature_based": _arm_summary(fb),
            }
        )
    return {"backbones": rows}


def _arm_summary(report: dict | None) -> dict | None:
    if report is None:
        return None
    m = report["metrics"]
    return {
        "accuracy": m["accuracy"],
        "auc": report["auc"],
        "sensitivity": m["sensitivity"],
        "specificity": m["specificity"],
        "threshold": report["threshold"],
        "split_hash": report.get("split_hash"),
    }


def write_comparison(comparison: dict, out_dir: str | Path) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out_dir / "comparison.json"
    with open(json_path, "w") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(str(json_path))

    csv_path = out_dir / "comparison.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["backbone", "approach", "accuracy_pct", "auc", "sensitivity_pct", "specificity_pct"]
        )
        for row in comparison["backbones"]:
            for arm in ("end_to_end", "feature_based"):
                summary = row[arm]
                if summary is None:
                    continue
                w.writerow(
                    [
                        row["backbone"],
                        arm,
                        _pct(summary["accuracy"]),
                        "n/a" if summary["auc"] is None else f"{summary['auc']:.4f}",
                        _pct(summary["sensitivity"]),
                        _pct(summary["specificity"]),
                    ]
                )
    written.append(str(csv_path))

    md_path = out_dir / "comparison.md"
    lines = [
        "| Backbone | Approach | Accuracy (%) | AUC | Sensitivity (%) | Specificity (%) |",
        "|---|---|---|---|---|---|",
    ]
    for row in comparison["backbones"]:
        for arm in ("end_to_end", "feature_based"):
            summary = row[arm]
            if summary is None:
                continue
            auc = "n/a" if summary["auc"] is None else f"{summary['auc']:.4f}"
            lines.append(
                f"| {row['backbone']} | {arm} | {_pct(summary['accuracy'])} | {auc} "
                f"| {_pct(summary['sensitivity'])} | {_pct(summary['specificity'])} |"
            )
    md_path.write_text("\n".join(lines) + "\n")
    written.append(str(md_path))
    return written


def metrics_table(reports: dict[str, dict], out_dir: str | Path) -> list[str]:
    """Delimited + Markdown summary of evaluation reports, one row per model."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    csv_path = out_dir / "metrics_table.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "tp", "tn", "fp", "fn", "sensitivity_pct", "specificity_pct", "accuracy_pct", "auc"])
        for name in sorted(reports):
            r = reports[name]
            cm, m = r["confusion"], r["metrics"]
            w.writerow(
                [
                    name,
                    cm["tp"],
                    cm["tn"],
                    cm["fp"],
                    cm["fn"],
                    _pct(m["sensitivity"]),
                    _pct(m["specificity"]),
                    _pct(m["accuracy"]),
                    f"{r['auc']:.4f}",
                ]
            )
    written.append(str(csv_path))

    md_path = out_dir / "metrics_table.md"
    lines = [
        "| Model | TP | TN | FP | FN | Sensitivity (%) | Specificity (%) | Accuracy (%) | AUC |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for name in sorted(reports):
        r = reports[name]
        cm, m = r["confusion"], r["metrics"]
        lines.append(
            f"| {name} | {cm['tp']} | {cm['tn']} | {cm['fp']} | {cm['fn']} "
            f"| {_pct(m['sensitivity'])} | {_pct(m['specificity'])} | {_pct(m['accuracy'])} | {r['auc']:.4f} |"
        )
    md_path.write_text("\n".join(lines) + "\n")
    written.append(str(md_path))
    return written
