"""Reference-based quality metrics on progressively corrupted frames.

Run:  python demos/demo_quality_metrics.py
"""

from pathlib import Path

from nightrain.harness import approaching_vehicle_scene, render_frame
from nightrain.quality import quality_report, write_quality_csv
from nightrain.rainsim import apply_stage, stage_config

out = Path(__file__).parent / "out" / "quality"

spec = approaching_vehicle_scene("demo", seed=3, n_frames=30)
clean = render_frame(spec, 18, seed=3)

pairs = []
names = []
for stage in (1, 2, 3, 4):
    frame = apply_stage(clean, stage_config(stage), seed=40 + stage)
    pairs.append((frame.noisy, clean))
    names.append(f"stage{stage}")

report = quality_report(pairs, names=names)
write_quality_csv(report, out / "report.csv")

print(f"{'pair':8s} {'psnr':>7s} {'ssim':>7s} {'mse':>9s} {'mae':>8s}")
for row in list(report.rows) + [report.mean]:
    print(f"{row.name:8s} {row.psnr_db:7.2f} {row.ssim:7.4f} "
          f"{row.mse:9.6f} {row.mae:8.5f}")
print(f"\nCSV written to {out / 'report.csv'}")
