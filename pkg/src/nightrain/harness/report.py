"""CSV and SVG report emission.

report.csv, per_scene.csv, and report.svg are deterministic byte-for-byte
given the evaluation results; timing.csv holds wall-clock throughput plus a
machine descriptor and is the one artifact allowed to differ between runs.
"""

from __future__ import annotations

import csv
import platform
from pathlib import Path

AB_COLUMNS = ("variant", "config_hash", "proposal_recall_pct",
              "classifier_accuracy_pct", "early_warning_pct")

SVG_METRICS = (
    ("proposal_recall_pct", "Proposal recall (%)"),
    ("classifier_accuracy_pct", "Classifier accuracy (%)"),
    ("early_warning_pct", "Early warning (%)"),
)


def write_per_scene_csv(evals, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scene_id", "gt_instances", "matched",
                         "label_correct", "label_total", "early_warning_success"))
        for e in evals:
            writer.writerow((e.scene_id, e.gt_instances, e.matched,
                             e.label_correct, e.label_total,
                             int(e.early_warning_success)))


def write_ab_csv(reports, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AB_COLUMNS)
        for r in reports:
            writer.writerow((
                r.variant, r.config_hash,
                f"{r.proposal_recall_pct:.4f}",
                f"{r.classifier_accuracy_pct:.4f}",
                f"{r.early_warning_pct:.4f}",
            ))


def read_ab_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def write_timing_csv(reports, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    machine = f"{platform.machine()}/{platform.system()}"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("variant", "avg_fps", "machine"))
        for r in reports:
            writer.writerow((r.variant, f"{r.avg_fps:.4f}", machine))


def write_metrics_svg(reports, path) -> None:
    """Grouped bar chart of the A/B percentages; bytes depend only on the
    report values."""
    width, height = 640, 360
    margin_l, margin_b, margin_t = 60, 60, 30
    plot_w = width - margin_l - 20
    plot_h = height - margin_b - margin_t
    colors = {"raw": "#888888", "denoised": "#2f6fb4"}
    group_w = plot_w / len(SVG_METRICS)
    bar_w = group_w / (len(reports) + 1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" '
        f'y2="{margin_t + plot_h}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t + plot_h}" '
        f'x2="{margin_l + plot_w}" y2="{margin_t + plot_h}" stroke="black"/>',
    ]
    for tick in range(0, 101, 25):
        y = margin_t + plot_h * (1 - tick / 100.0)
        parts.append(
            f'<text x="{margin_l - 8}" y="{y:.1f}" font-size="11" '
            f'text-anchor="end" dominant-baseline="middle">{tick}</text>'
        )
        parts.append(
            f'<line x1="{margin_l - 4}" y1="{y:.1f}" x2="{margin_l}" '
            f'y2="{y:.1f}" stroke="black"/>'
        )
    for gi, (key, label) in enumerate(SVG_METRICS):
        gx = margin_l + gi * group_w
        for ri, r in enumerate(reports):
            val = getattr(r, key)
            bh = plot_h * val / 100.0
            x = gx + bar_w * (ri + 0.5)
            y = margin_t + plot_h - bh
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                f'height="{bh:.1f}" fill="{colors.get(r.variant, "#444")}"/>'
            )
            parts.append(
                f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" font-size="10" '
                f'text-anchor="middle">{val:.1f}</text>'
            )
        parts.append(
            f'<text x="{gx + group_w / 2:.1f}" y="{margin_t + plot_h + 18}" '
            f'font-size="11" text-anchor="middle">{label}</text>'
        )
    for ri, r in enumerate(reports):
        x = margin_l + 10 + ri * 120
        y = height - 18
        parts.append(
            f'<rect x="{x}" y="{y - 10}" width="12" height="12" '
            f'fill="{colors.get(r.variant, "#444")}"/>'
        )
        parts.append(
            f'<text x="{x + 18}" y="{y}" font-size="11">{r.variant}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts) + "\n")
