"""Miniature raw-vs-denoised A/B evaluation (6 scenes, short training).

The acceptance suite runs the full-size protocol; this demo keeps the same
shape at a fraction of the cost (~3 minutes).

Run:  python demos/demo_full_pipeline.py
"""

import dataclasses
import tempfile
from pathlib import Path

from nightrain.config import AppConfig, EvalConfig
from nightrain.denoise import TrainConfig, train_curriculum
from nightrain.harness.pipeline import (
    build_scene_suite,
    corrupt_suite,
    fit_suite_classifier,
    make_patch_dataset,
    run_ab,
)
from nightrain.rainsim import build_curriculum, default_stages
from nightrain.track import TrackerConfig

work = Path(tempfile.mkdtemp(prefix="nightrain_demo_"))
cfg = dataclasses.replace(
    AppConfig(),
    tracker=TrackerConfig(gate=12.0, birth_hits=3),  # desk-scale association
    eval=EvalConfig(n_scenes=6, n_frames=36),
)

print("training a short-schedule denoiser (120 steps x 5 stages)...")
patches = make_patch_dataset(work / "patches", cfg, seed=7, n_patches=80)
manifest = build_curriculum(patches, default_stages(cfg.anchors), work / "curr", seed=11)
ckpt, _ = train_curriculum(manifest, TrainConfig(steps_per_stage=120, seed=3, candidates=1))

print("building the scene suite and stage-3 corrupted copy...")
clean = build_scene_suite(work / "clean", cfg, seed=501)
corrupted = corrupt_suite(clean, work / "stage3", cfg, seed=502)
train_scenes = build_scene_suite(work / "tc", cfg, seed=601, n_scenes=6, prefix="t")
classifier = fit_suite_classifier(train_scenes, cfg)

out = Path(__file__).parent / "out" / "pipeline"
reports = run_ab(corrupted, ckpt, classifier, cfg, out)
print(f"\n{'variant':9s} {'recall%':>8s} {'accuracy%':>10s} {'early-warn%':>12s} {'fps':>7s}")
for variant in ("raw", "denoised"):
    r = reports[variant]
    print(f"{variant:9s} {r.proposal_recall_pct:8.2f} {r.classifier_accuracy_pct:10.2f} "
          f"{r.early_warning_pct:12.2f} {r.avg_fps:7.1f}")
print(f"\nreport.csv, timing.csv, report.svg in {out}")
