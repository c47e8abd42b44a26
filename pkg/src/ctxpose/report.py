"""Report writers: JSON/CSV outputs with rendered figures alongside.

Every figure is written deterministically (Agg backend, fixed dpi, no
software/date metadata) so re-running a command with the same config and
seed reproduces the PNG byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataMismatch

_FIG_KW = {"dpi": 120, "metadata": {"Software": None}}


def _fmt(v) -> str:
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def write_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])


def save_figure(fig, path) -> None:
    fig.savefig(path, **_FIG_KW)
    plt.close(fig)


def write_eval_report(out_dir, report, rows: list[dict], with_scale: bool = False) -> None:
    """Aggregate JSON, per-sample CSV, and the per-sample error figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.as_dict())
    fields = ["sample_id", "mpjpe_p1", "mpjpe_p2", "mplle", "mplae"]
    if with_scale:
        fields.append("mpjpe_p2_scaled")
    write_csv(out / "per_sample.csv", fields, rows)

    order = sorted(range(len(rows)), key=lambda i: -rows[i]["mplle"])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot([rows[i]["mplle"] for i in order], color="0.3")
    axes[0].set_xlabel("sample (sorted by limb error)")
    axes[0].set_ylabel("MPLLE (mm)")
    axes[1].plot([rows[i]["mpjpe_p1"] for i in order], color="tab:blue")
    axes[1].set_xlabel("sample (same order)")
    axes[1].set_ylabel("MPJPE p1 (mm)")
    fig.tight_layout()
    save_figure(fig, out / "metrics.png")


def load_per_sample(run_dir) -> list[dict]:
    path = Path(run_dir) / "per_sample.csv"
    if not path.exists():
        raise DataMismatch(f"no per_sample.csv under {run_dir}")
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    k: (v if k == "sample_id" else float(v))
                    for k, v in row.items()
                }
            )
        return rows


def write_compare_report(out_dir, rows_a: list[dict], rows_b: list[dict], metric: str = "mplle") -> dict:
    """Per-sample difference series between two eval runs.

    The difference is run B minus run A per sample, so negative values mean
    run B improves on run A. Samples are ordered by run A's error,
    descending (hard cases first). Raises DataMismatch when the sample sets
    differ.
    """
    ids_a = [r["sample_id"] for r in rows_a]
    ids_b = [r["sample_id"] for r in rows_b]
    if set(ids_a) != set(ids_b):
        raise DataMismatch(
            f"sample sets differ: {len(ids_a)} vs {len(ids_b)} rows, "
            f"symmetric difference {sorted(set(ids_a) ^ set(ids_b))[:5]}"
        )
    by_id = {r["sample_id"]: r for r in rows_b}
    merged = [
        {
            "sample_id": ra["sample_id"],
            f"{metric}_a": ra[metric],
            f"{metric}_b": by_id[ra["sample_id"]][metric],
            "difference": by_id[ra["sample_id"]][metric] - ra[metric],
        }
        for ra in rows_a
    ]
    merged.sort(key=lambda r: (-r[f"{metric}_a"], r["sample_id"]))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "compare.csv",
        ["sample_id", f"{metric}_a", f"{metric}_b", "difference"],
        merged,
    )
    diffs = [r["difference"] for r in merged]
    summary = {
        "metric": metric,
        "n_samples": len(merged),
        "mean_a": sum(r[f"{metric}_a"] for r in merged) / len(merged),
        "mean_b": sum(r[f"{metric}_b"] for r in merged) / len(merged),
        "mean_difference": sum(diffs) / len(diffs),
        "fraction_improved": sum(d < 0 for d in diffs) / len(diffs),
        "sign_convention": "difference = b - a; negative means run b is better",
    }
    write_json(out / "compare.json", summary)

    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot([r[f"{metric}_a"] for r in merged], color="0.6", label=f"run a {metric}")
    ax.plot(diffs, color="tab:blue", label="difference (b - a)")
    ax.axhline(0.0, color="0.2", linewidth=0.8)
    ax.set_xlabel("sample (sorted by run a error, descending)")
    ax.set_ylabel(f"{metric} (mm)")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    save_figure(fig, out / "compare.png")
    return summary


def write_training_curves(out_dir, epoch_rows: list[dict]) -> None:
    """Loss curves from the JSONL training log rows."""
    if not epoch_rows:
        return
    out = Path(out_dir)
    epochs = [r["epoch"] for r in epoch_rows]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(epochs, [r["l3d"] for r in epoch_rows], label="pose loss")
    if any(r.get("lga_weighted", 0.0) for r in epoch_rows):
        ax.plot(epochs, [r["lga_weighted"] for r in epoch_rows], label="weighted attention loss")
    if "val_mpjpe_p1" in epoch_rows[0]:
        ax.plot(epochs, [r["val_mpjpe_p1"] for r in epoch_rows], label="val MPJPE p1 (mm)")
    ax.set_xlabel("epoch")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    save_figure(fig, out / "training.png")
