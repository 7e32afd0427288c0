"""Train a small denoiser through the curriculum (abbreviated schedule).

Builds 60 training patches, corrupts them into the five-stage curriculum,
trains 60 steps per stage (~1 minute), and reports the PSNR gain on a
held-out stage-3 patch set.  The acceptance suite runs the full-length
version of this (200 patches, 500 steps per stage).

Run:  python demos/demo_denoiser_training.py
"""

import tempfile
from pathlib import Path

import numpy as np

from nightrain.config import AppConfig
from nightrain.denoise import TrainConfig, denoise_frame, median_denoise, train_curriculum
from nightrain.harness.pipeline import make_patch_dataset
from nightrain.imgcore import load_image, save_image
from nightrain.quality import psnr
from nightrain.rainsim import apply_stage, build_curriculum, default_stages, stage_config
from nightrain.rng import derive_seed

out = Path(__file__).parent / "out" / "training"
work = Path(tempfile.mkdtemp(prefix="nightrain_demo_"))
cfg = AppConfig()

patches = make_patch_dataset(work / "patches", cfg, seed=7, n_patches=60)
manifest = build_curriculum(patches, default_stages(cfg.anchors), work / "curr", seed=11)
print("curriculum built; training (60 steps x 5 stages)...")

ckpt, rows = train_curriculum(manifest, TrainConfig(steps_per_stage=60, seed=3, candidates=1))
for r in rows:
    print(f"  stage {r.stage} step {r.step:4d}  loss {r.total:.4f}  "
          f"val psnr {r.val_psnr:.2f} dB")

test = make_patch_dataset(work / "test", cfg, seed=99, n_patches=16)
s3 = stage_config(3, cfg.anchors)
noisy_db, out_db, med_db = [], [], []
shown = False
for sc in test.scenes:
    for fr in sc.frames:
        clean = load_image(test.root / "scenes" / sc.scene_id / fr.image_path)
        corrupted = apply_stage(clean, s3, derive_seed(5, sc.scene_id, fr.frame_index))
        restored = denoise_frame(ckpt, corrupted.noisy)
        noisy_db.append(psnr(corrupted.noisy, clean))
        out_db.append(psnr(restored, clean))
        med_db.append(psnr(median_denoise(corrupted.noisy), clean))
        if not shown:
            save_image(clean, out / "clean.png")
            save_image(corrupted.noisy, out / "noisy.png")
            save_image(restored, out / "restored.png")
            shown = True

print(f"\nheld-out stage-3: noisy {np.mean(noisy_db):.2f} dB | "
      f"denoised {np.mean(out_db):.2f} dB | median filter {np.mean(med_db):.2f} dB")
print(f"example triple in {out}")
