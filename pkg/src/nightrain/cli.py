"""Command-line interface.

One binary, subcommands: synth, train, denoise, quality, detect, track,
eval, gradcheck, script.  Every subcommand accepts --config <toml>,
--seed <u64>, and --out <dir>.  Exit codes: 0 success, 2 validation error,
3 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .errors import DivergenceError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=0, help="global 64-bit seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nightrain",
        description="deterministic night-rain perception toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build the curriculum from a clean dataset")
    _common(p)
    p.add_argument("--clean", type=Path, required=True, help="clean dataset root")
    p.add_argument("--real", type=Path, default=None,
                   help="real rainy dataset root for stage-5 mixing")

    p = sub.add_parser("train", help="train the denoiser on a curriculum")
    _common(p)
    p.add_argument("--curriculum", type=Path, required=True,
                   help="curriculum directory (contains manifest.json)")

    p = sub.add_parser("denoise", help="restore every PNG in a directory")
    _common(p)
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint directory")
    p.add_argument("--in", dest="in_dir", type=Path, required=True)

    p = sub.add_parser("quality", help="reference metrics over paired directories")
    _common(p)
    p.add_argument("--restored", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)

    p = sub.add_parser("detect", help="detect lights in one scene directory")
    _common(p)
    p.add_argument("--ckpt", type=Path, default=None,
                   help="denoiser checkpoint (omit to run raw)")
    p.add_argument("--model", type=Path, required=True, help="classifier model JSON")
    p.add_argument("--in", dest="in_dir", type=Path, required=True,
                   help="scene directory (images/ + annotations.json)")

    p = sub.add_parser("track", help="track a detections.json file")
    _common(p)
    p.add_argument("--detections", type=Path, required=True)

    p = sub.add_parser("eval", help="A/B evaluation over a scripted suite")
    _common(p)
    p.add_argument("--suite", type=Path, required=True,
                   help="evaluation suite dataset root")
    p.add_argument("--train-suite", type=Path, default=None,
                   help="clean suite for classifier fitting (defaults to --suite)")
    p.add_argument("--ckpt", type=Path, required=True, help="denoiser checkpoint")
    p.add_argument("--model", type=Path, default=None,
                   help="pre-trained classifier JSON (skips fitting)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _common(p)
    p.add_argument("--params", type=int, default=50)
    p.add_argument("--patch", type=int, default=16)

    p = sub.add_parser("script", help="generate a scripted scene suite")
    _common(p)
    p.add_argument("--scenes", type=int, default=None,
                   help="number of scenes (default from config)")
    p.add_argument("--corrupt-stage", type=int, default=None,
                   help="also emit a rain-corrupted copy at this stage")
    return parser


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def _cmd_synth(args, cfg: AppConfig) -> int:
    from .imgcore import load_dataset
    from .rainsim import build_curriculum, default_stages

    clean = load_dataset(args.clean)
    real = load_dataset(args.real) if args.real else None
    manifest = build_curriculum(clean, default_stages(cfg.anchors), args.out,
                                seed=args.seed, real_rain_scenes=real,
                                mix_ratio=cfg.mix_ratio)
    print(f"curriculum manifest: {manifest}")
    return EXIT_OK


def _cmd_train(args, cfg: AppConfig) -> int:
    import dataclasses

    from .denoise import train_curriculum

    train_cfg = dataclasses.replace(cfg.train, seed=args.seed)
    ckpt, rows = train_curriculum(args.curriculum, train_cfg, cfg.loss,
                                  config_hash=cfg.config_hash(),
                                  out_dir=args.out)
    last = rows[-1] if rows else None
    if last:
        print(f"final: stage {last.stage} step {last.step} "
              f"total {last.total:.6f} val_psnr {last.val_psnr:.2f}")
    print(f"checkpoint: {args.out}")
    return EXIT_OK


def _cmd_denoise(args, cfg: AppConfig) -> int:
    from .denoise import denoise_frame, load_checkpoint
    from .imgcore import load_image, save_image

    ckpt = load_checkpoint(args.ckpt)
    pngs = sorted(Path(args.in_dir).glob("*.png"))
    if not pngs:
        raise ValidationError(f"no PNG files in {args.in_dir}")
    for p in pngs:
        save_image(denoise_frame(ckpt, load_image(p)), Path(args.out) / p.name)
    print(f"denoised {len(pngs)} frames -> {args.out}")
    return EXIT_OK


def _cmd_quality(args, cfg: AppConfig) -> int:
    from .imgcore import load_image
    from .quality import quality_report, write_quality_csv

    restored_dir = Path(args.restored)
    reference_dir = Path(args.reference)
    names = sorted(p.name for p in restored_dir.glob("*.png"))
    if not names:
        raise ValidationError(f"no PNG files in {restored_dir}")
    pairs, kept = [], []
    for name in names:
        ref = reference_dir / name
        if not ref.exists():
            raise ValidationError(f"missing reference image: {ref}")
        pairs.append((load_image(restored_dir / name), load_image(ref)))
        kept.append(name)
    report = quality_report(pairs, names=kept, ssim_cfg=cfg.ssim)
    out_csv = Path(args.out) / "report.csv"
    write_quality_csv(report, out_csv)
    m = report.mean
    print(f"pairs {len(kept)}  psnr {m.psnr_db:.3f}  ssim {m.ssim:.5f}  "
          f"mse {m.mse:.6g}  -> {out_csv}")
    return EXIT_OK


def _load_scene_dir(scene_dir: Path):
    import json

    from .imgcore import scene_from_json
    from PIL import Image

    ann = scene_dir / "annotations.json"
    if not ann.exists():
        raise ValidationError(f"{scene_dir} has no annotations.json")
    doc = json.loads(ann.read_text())
    scene = scene_from_json(doc)
    first = scene_dir / scene.frames[0].image_path
    with Image.open(first) as im:
        width, height = im.size
    return scene, width, height


def _cmd_detect(args, cfg: AppConfig) -> int:
    from .denoise import load_checkpoint
    from .detect import ClassifierModel, DetectConfig, detections_to_json
    from .harness.pipeline import process_frame
    from .imgcore import dump_json, load_image

    scene_dir = Path(args.in_dir)
    scene, width, height = _load_scene_dir(scene_dir)
    ckpt = load_checkpoint(args.ckpt) if args.ckpt else None
    model = ClassifierModel.load(args.model)
    det_cfg = DetectConfig.for_image(width, height, tau=cfg.eval.tau,
                                     a_min=cfg.eval.a_min, a_max=cfg.eval.a_max,
                                     eps_y_frac=cfg.eval.eps_y_frac,
                                     d_min_frac=cfg.eval.d_min_frac,
                                     d_max_frac=cfg.eval.d_max_frac)
    variant = "denoised" if ckpt else "raw"
    per_frame = []
    for fr in scene.frames:
        img = load_image(scene_dir / fr.image_path)
        proposals, classified, pairs = process_frame(
            img, variant, ckpt, model, det_cfg, cfg.photometric
        )
        per_frame.append((fr.frame_index, proposals, classified, pairs))
    out_path = Path(args.out) / "detections.json"
    dump_json(detections_to_json(scene.scene_id, per_frame), out_path)
    n_props = sum(len(x[1]) for x in per_frame)
    print(f"{scene.scene_id}: {n_props} proposals over "
          f"{len(per_frame)} frames -> {out_path}")
    return EXIT_OK


def _cmd_track(args, cfg: AppConfig) -> int:
    import json

    from .detect import detections_from_json
    from .imgcore import dump_json
    from .track import track_scene, tracks_to_json

    doc = json.loads(Path(args.detections).read_text())
    scene_id, per_frame = detections_from_json(doc)
    results = track_scene(per_frame, cfg.tracker, cfg.thresholds)
    out_path = Path(args.out) / "tracks.json"
    dump_json(tracks_to_json(scene_id, results), out_path)
    n_dec = sum(len(r["decisions"]) for r in results)
    print(f"{scene_id}: {n_dec} decisions over {len(results)} frames -> {out_path}")
    return EXIT_OK


def _cmd_eval(args, cfg: AppConfig) -> int:
    from .denoise import load_checkpoint
    from .detect import ClassifierModel
    from .harness.pipeline import fit_suite_classifier, run_ab
    from .imgcore import load_dataset

    suite = load_dataset(args.suite)
    ckpt = load_checkpoint(args.ckpt)
    if args.model:
        classifier = ClassifierModel.load(args.model)
    else:
        train_suite = load_dataset(args.train_suite) if args.train_suite else suite
        classifier = fit_suite_classifier(train_suite, cfg)
        classifier.save(Path(args.out) / "classifier.json")
    reports = run_ab(suite, ckpt, classifier, cfg, args.out)
    for variant in ("raw", "denoised"):
        r = reports[variant]
        print(f"{variant:9s} recall {r.proposal_recall_pct:6.2f}%  "
              f"accuracy {r.classifier_accuracy_pct:6.2f}%  "
              f"early-warning {r.early_warning_pct:6.2f}%  "
              f"fps {r.avg_fps:.1f}")
    return EXIT_OK


def _cmd_gradcheck(args, cfg: AppConfig) -> int:
    from .denoise import finite_difference_check

    max_rel, results = finite_difference_check(
        seed=args.seed, patch=args.patch, n_params=args.params,
        weights=cfg.loss,
    )
    print(f"max relative error over {len(results)} sampled parameters: "
          f"{max_rel:.3e}")
    if not max_rel < 1e-4:
        raise DivergenceError(
            f"gradient check failed: {max_rel:.3e} >= 1e-4"
        )
    return EXIT_OK


def _cmd_script(args, cfg: AppConfig) -> int:
    from .harness.pipeline import build_scene_suite, corrupt_suite

    clean_dir = Path(args.out) / "clean"
    suite = build_scene_suite(clean_dir, cfg, args.seed, n_scenes=args.scenes)
    print(f"scripted {len(suite.scenes)} scenes -> {clean_dir}")
    if args.corrupt_stage is not None:
        corrupted_dir = Path(args.out) / f"stage{args.corrupt_stage}"
        corrupt_suite(suite, corrupted_dir, cfg, args.seed,
                      stage=args.corrupt_stage)
        print(f"corrupted copy (stage {args.corrupt_stage}) -> {corrupted_dir}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "quality": _cmd_quality,
    "detect": _cmd_detect,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "script": _cmd_script,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
