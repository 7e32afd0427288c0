"""End-to-end orchestration: suite generation, the per-frame pipeline, the
raw/denoised A/B protocol, and report emission.

Per frame the pipeline runs enhance -> (denoise when the variant asks) ->
saliency -> propose -> classify -> pair -> track -> decide.  Both variants
share seeds, configs, and the trained classifier; the only difference is the
denoiser toggle, which the shared config hash makes checkable.

Wall-clock throughput is written to a separate timing.csv: every other
artifact (reports, detections, tracks, plots) is a pure function of inputs
and reproduces byte-for-byte under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import AppConfig
from ..detect import (
    ClassifierModel,
    DetectConfig,
    classify,
    detections_to_json,
    extract_features,
    pair,
    propose,
    saliency_map,
    train_classifier,
)
from ..denoise import Checkpoint, denoise_frame
from ..errors import ValidationError
from ..imgcore import Dataset, dump_json, load_dataset, load_image, save_image
from ..photometric import enhance
from ..rainsim import apply_stage, stage_config
from ..rng import derive_seed
from ..track import track_scene, tracks_to_json
from .evaluate import aggregate, evaluate_scene, match_instances, measure_fps, gt_label
from .report import write_ab_csv, write_per_scene_csv, write_metrics_svg, write_timing_csv
from .scripted import approaching_vehicle_scene, script_scene

VARIANTS = ("raw", "denoised")


@dataclass
class EvalReport:
    variant: str
    config_hash: str
    proposal_recall_pct: float
    classifier_accuracy_pct: float
    early_warning_pct: float
    avg_fps: float
    per_scene: list


# ---------------------------------------------------------------------------
# Suite generation
# ---------------------------------------------------------------------------

def build_scene_suite(out_dir, cfg: AppConfig, seed: int, n_scenes=None,
                      prefix: str = "scene") -> Dataset:
    """Render a suite of clean approaching-vehicle scenes."""
    n = n_scenes if n_scenes is not None else cfg.eval.n_scenes
    out_dir = Path(out_dir)
    for i in range(n):
        # every third scene is a leading vehicle, so taillight supervision
        # exists alongside headlights
        kind = "leading" if i % 3 == 2 else "oncoming"
        spec = approaching_vehicle_scene(
            f"{prefix}_{i:03d}", seed=derive_seed(seed, "suite", prefix, i),
            width=cfg.eval.scene_width, height=cfg.eval.scene_height,
            n_frames=cfg.eval.n_frames, vehicle_kind=kind,
        )
        script_scene(spec, seed=derive_seed(seed, "render", prefix, i), out_root=out_dir)
    return load_dataset(out_dir)


def corrupt_suite(clean_suite: Dataset, out_dir, cfg: AppConfig, seed: int,
                  stage: int | None = None) -> Dataset:
    """Copy a suite with every frame corrupted at the given stage; the
    annotations are carried over unchanged."""
    stage = stage if stage is not None else cfg.eval.corrupt_stage
    scfg = stage_config(stage, cfg.anchors)
    out_dir = Path(out_dir)
    for scene in clean_suite.scenes:
        scene_dir = out_dir / "scenes" / scene.scene_id
        src_dir = clean_suite.root / "scenes" / scene.scene_id
        for fr in scene.frames:
            clean = load_image(src_dir / fr.image_path)
            frame_seed = derive_seed(seed, scene.scene_id, fr.frame_index, stage)
            corrupted = apply_stage(clean, scfg, frame_seed)
            save_image(corrupted.noisy, scene_dir / fr.image_path)
        (scene_dir / "annotations.json").write_bytes(
            (src_dir / "annotations.json").read_bytes()
        )
    return load_dataset(out_dir)


def make_patch_dataset(out_dir, cfg: AppConfig, seed: int, n_patches: int = 200,
                       patch: int = 64, frames_per_scene: int = 20) -> Dataset:
    """Render photometrically-corrected clean training patches.

    Patches are random crops of enhanced scripted-scene-style frames (dark
    texture plus light blobs), stored as single-image frames grouped into
    scenes of frames_per_scene, giving the curriculum builder a regular
    Dataset to corrupt.
    """
    from ..imgcore import FrameRecord, Scene, write_scene
    from ..rng import make_rng
    from .scripted import ScriptedScene, LightSpec, render_frame

    out_dir = Path(out_dir)
    n_scenes = (n_patches + frames_per_scene - 1) // frames_per_scene
    count = 0
    for si in range(n_scenes):
        rng = make_rng(derive_seed(seed, "patches", si))
        images = {}
        frames = []
        for fi in range(min(frames_per_scene, n_patches - count)):
            # mostly blob-bearing patches so the denoiser learns to keep
            # round bright structures intact; a few stay texture-only
            n_lights = 0 if rng.uniform() < 0.15 else 1 + int(rng.integers(0, 5))
            lights = []
            for li in range(n_lights):
                kind = "reflection" if rng.uniform() < 0.5 else "direct"
                x = float(rng.uniform(5, patch - 5))
                y = float(rng.uniform(5, patch - 5))
                sigma = float(rng.uniform(1.5, 4.5))
                peak = float(rng.uniform(0.5, 1.0))
                lights.append(LightSpec(kind, li, 0, 0, (x, x), (y, y),
                                        (sigma, sigma), (peak, peak)))
            spec = ScriptedScene(
                scene_id=f"patch_{si:03d}", width=patch, height=patch,
                n_frames=1, lights=tuple(lights),
                first_reflection_frame=0, first_direct_frame=0,
            )
            img = render_frame(spec, 0, derive_seed(seed, "patchbg", si, fi))
            images[fi] = enhance(img, cfg.photometric)
            frames.append(FrameRecord(frame_index=fi,
                                      image_path=f"images/frame_{fi:06d}.png",
                                      vehicles=()))
            count += 1
        scene = Scene(scene_id=f"patch_{si:03d}", time_of_day="night",
                      frames=tuple(frames), width=patch, height=patch)
        write_scene(scene, images, out_dir)
    return load_dataset(out_dir)


# ---------------------------------------------------------------------------
# Classifier fitting
# ---------------------------------------------------------------------------

def collect_classifier_examples(suite: Dataset, cfg: AppConfig,
                                max_frames_per_scene: int = 18):
    """Harvest (features, label) pairs from enhanced frames of a suite.

    Proposals matched to annotated instances inherit the supervision label
    of the instance kind; unmatched proposals become artifacts.
    """
    feats, labels = [], []
    for scene in suite.scenes:
        scene_dir = suite.root / "scenes" / scene.scene_id
        det_cfg = DetectConfig.for_image(
            scene.width, scene.height, tau=cfg.eval.tau,
            a_min=cfg.eval.a_min, a_max=cfg.eval.a_max,
            eps_y_frac=cfg.eval.eps_y_frac, d_min_frac=cfg.eval.d_min_frac,
            d_max_frac=cfg.eval.d_max_frac,
        )
        step = max(1, len(scene.frames) // max_frames_per_scene)
        for fr in scene.frames[::step]:
            img = enhance(load_image(scene_dir / fr.image_path), cfg.photometric)
            sal = saliency_map(img)
            proposals = propose(sal, det_cfg, img=img)
            gt = [
                (inst.keypoint, gt_label(inst.kind, scene.vehicle_kind))
                for veh in fr.vehicles
                for inst in veh.instances
            ]
            matches = match_instances([pt for pt, _ in gt], proposals,
                                      cfg.eval.match_radius)
            matched = {pi: gt[gi][1] for gi, pi, _ in matches}
            for pi, prop in enumerate(proposals):
                feats.append(extract_features(img, prop))
                labels.append(matched.get(pi, "artifact"))
    return np.array(feats), labels


def fit_suite_classifier(train_suite: Dataset, cfg: AppConfig) -> ClassifierModel:
    feats, labels = collect_classifier_examples(train_suite, cfg)
    return train_classifier(feats, labels)


# ---------------------------------------------------------------------------
# Pipeline proper
# ---------------------------------------------------------------------------

def process_frame(img, variant: str, ckpt, classifier, det_cfg, photometric):
    """enhance -> (denoise) -> propose -> classify -> pair for one frame."""
    x = enhance(img, photometric)
    if variant == "denoised":
        x = denoise_frame(ckpt, x)
    sal = saliency_map(x)
    proposals = propose(sal, det_cfg, img=x)
    classified = classify(classifier, x, proposals)
    pairs = pair(classified, det_cfg)
    return proposals, classified, pairs


def run_scene(scene, suite_root: Path, variant: str, ckpt, classifier,
              cfg: AppConfig):
    scene_dir = suite_root / "scenes" / scene.scene_id
    det_cfg = DetectConfig.for_image(
        scene.width, scene.height, tau=cfg.eval.tau,
        a_min=cfg.eval.a_min, a_max=cfg.eval.a_max,
        eps_y_frac=cfg.eval.eps_y_frac, d_min_frac=cfg.eval.d_min_frac,
        d_max_frac=cfg.eval.d_max_frac,
    )
    per_frame = []
    for fr in scene.frames:
        img = load_image(scene_dir / fr.image_path)
        proposals, classified, pairs = process_frame(
            img, variant, ckpt, classifier, det_cfg, cfg.photometric
        )
        per_frame.append((fr.frame_index, proposals, classified, pairs))
    tracked = track_scene(per_frame, cfg.tracker, cfg.thresholds)
    decisions = [(row["frame_index"], row["decisions"]) for row in tracked]
    return per_frame, tracked, decisions


def run_pipeline(suite: Dataset, variant: str, ckpt, classifier,
                 cfg: AppConfig, out_dir, measure_timing: bool = True) -> EvalReport:
    """Evaluate one variant over a suite; writes detections, tracks, and the
    per-scene CSV under out_dir/<variant>/."""
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}, got {variant}")
    if variant == "denoised" and ckpt is None:
        raise ValidationError("denoised variant requires a checkpoint")
    out_dir = Path(out_dir) / variant
    out_dir.mkdir(parents=True, exist_ok=True)
    evals = []
    for scene in suite.scenes:
        per_frame, tracked, decisions = run_scene(
            scene, suite.root, variant, ckpt, classifier, cfg
        )
        dump_json(detections_to_json(scene.scene_id, per_frame),
                  out_dir / f"detections_{scene.scene_id}.json")
        dump_json(tracks_to_json(scene.scene_id, tracked),
                  out_dir / f"tracks_{scene.scene_id}.json")
        evals.append(
            evaluate_scene(scene, per_frame, decisions, cfg.eval.match_radius)
        )
    agg = aggregate(evals)

    avg_fps = 0.0
    if measure_timing:
        scene = suite.scenes[0]
        scene_dir = suite.root / "scenes" / scene.scene_id
        det_cfg = DetectConfig.for_image(
            scene.width, scene.height, tau=cfg.eval.tau,
            a_min=cfg.eval.a_min, a_max=cfg.eval.a_max,
            eps_y_frac=cfg.eval.eps_y_frac, d_min_frac=cfg.eval.d_min_frac,
            d_max_frac=cfg.eval.d_max_frac,
        )
        frames = [load_image(scene_dir / fr.image_path) for fr in scene.frames]
        while len(frames) < 55:
            frames = frames + frames
        avg_fps = measure_fps(
            lambda img: process_frame(img, variant, ckpt, classifier,
                                      det_cfg, cfg.photometric),
            frames[:60],
        )

    report = EvalReport(
        variant=variant,
        config_hash=cfg.config_hash(),
        proposal_recall_pct=agg["proposal_recall_pct"],
        classifier_accuracy_pct=agg["classifier_accuracy_pct"],
        early_warning_pct=agg["early_warning_pct"],
        avg_fps=avg_fps,
        per_scene=evals,
    )
    write_per_scene_csv(evals, out_dir / "per_scene.csv")
    return report


def run_ab(suite: Dataset, ckpt: Checkpoint, classifier: ClassifierModel,
           cfg: AppConfig, out_dir, measure_timing: bool = True) -> dict:
    """Run both variants with identical configuration and emit the combined
    report CSV, the timing CSV, and the comparison SVG."""
    out_dir = Path(out_dir)
    reports = {}
    for variant in VARIANTS:
        reports[variant] = run_pipeline(
            suite, variant, ckpt if variant == "denoised" else None,
            classifier, cfg, out_dir, measure_timing=measure_timing,
        )
    write_ab_csv([reports["raw"], reports["denoised"]], out_dir / "report.csv")
    write_timing_csv([reports["raw"], reports["denoised"]], out_dir / "timing.csv")
    write_metrics_svg([reports["raw"], reports["denoised"]], out_dir / "report.svg")
    return reports
