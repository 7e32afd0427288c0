"""Seeded synthetic rain corruption and the staged curriculum builder.

Streaks are anti-aliased line segments radiating from a vanishing point,
with per-streak length, width, opacity, and angular jitter drawn from a
Philox generator, so a (params, seed) pair always renders the same layer.
The additive streak layer composites as clamp(clean + layer, 0, 1); each
corruption stage then applies, in order, Gaussian blur, motion blur, and a
haze blend (1 - strength) * p + strength * airlight.

Stage severities follow the 25% / 50% / 75% schedule: a scalar severity in
{0.25, 0.5, 0.75} linearly scales streak density, the opacity midpoint,
blur sigma, and haze strength between zero and the configured anchors.
Gaussian blur and haze switch on at stage 3 and motion blur at stage 4,
matching the staged build-up from drizzle overlays to heavy degradation.

The curriculum builder emits per-stage (noisy, clean, mask) PNG triples and
a manifest; per-frame seeds are derived from (global seed, scene, frame,
stage), so generation is order-independent and reruns are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .imgcore import (
    Dataset,
    check_same_shape,
    dump_json,
    load_image,
    save_image,
)
from .rng import derive_seed, make_rng

MASK_THRESHOLD = 0.05

SEVERITY_BY_STAGE = {1: 0.0, 2: 0.25, 3: 0.5, 4: 0.75, 5: 0.75}


@dataclass(frozen=True)
class StreakParams:
    density: float = 0.0           # streaks per megapixel
    length_range: tuple = (6.0, 20.0)
    width_range: tuple = (1.0, 2.0)
    opacity_range: tuple = (0.1, 0.3)
    vanishing_point: tuple = (0.5, 0.5)  # normalised image coordinates
    jitter_deg: float = 5.0

    def validate(self):
        if self.density < 0:
            raise ValidationError(f"density must be >= 0, got {self.density}")
        for name in ("length_range", "width_range", "opacity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"{name} must be nondecreasing, got ({lo}, {hi})")
        lo, hi = self.opacity_range
        if lo < 0 or hi > 1:
            raise ValidationError(f"opacities must lie in [0, 1], got ({lo}, {hi})")


@dataclass(frozen=True)
class StageConfig:
    stage: int
    streaks: StreakParams = field(default_factory=StreakParams)
    gaussian_blur_sigma: float = 0.0
    motion_blur: tuple = (0.0, 0.0)  # (length px, angle degrees)
    haze: tuple = (0.0, 0.0)         # (airlight, strength)
    severity: float = 0.0

    def validate(self):
        if not 1 <= self.stage <= 5:
            raise ValidationError(f"stage must be in 1..5, got {self.stage}")
        if self.stage == 1 and (
            self.streaks.density != 0
            or self.gaussian_blur_sigma != 0
            or self.motion_blur[0] != 0
            or self.haze[1] != 0
        ):
            raise ValidationError("stage 1 must have zero density, blur, and haze")
        self.streaks.validate()


@dataclass(frozen=True)
class SeverityAnchors:
    """Maximum values the severity scalar scales towards."""

    density_max: float = 9000.0
    opacity_mid_max: float = 0.55
    opacity_halfwidth: float = 0.1
    blur_sigma_max: float = 1.8
    haze_strength_max: float = 0.55
    airlight: float = 0.35
    motion_blur_length: float = 6.0
    motion_blur_angle: float = 45.0
    vanishing_point: tuple = (0.5, 0.5)
    jitter_by_stage: tuple = (0.0, 5.0, 60.0, 20.0, 20.0)  # stages 1..5


def stage_config(stage: int, anchors: SeverityAnchors = SeverityAnchors()) -> StageConfig:
    """Build the default StageConfig for one curriculum stage."""
    if not 1 <= stage <= 5:
        raise ValidationError(f"stage must be in 1..5, got {stage}")
    s = SEVERITY_BY_STAGE[stage]
    if stage == 1:
        return StageConfig(stage=1, streaks=StreakParams(density=0.0), severity=0.0)
    mid = anchors.opacity_mid_max * s
    lo = max(0.02, mid - anchors.opacity_halfwidth)
    hi = min(1.0, mid + anchors.opacity_halfwidth)
    streaks = StreakParams(
        density=anchors.density_max * s,
        opacity_range=(lo, hi),
        vanishing_point=anchors.vanishing_point,
        jitter_deg=anchors.jitter_by_stage[stage - 1],
    )
    return StageConfig(
        stage=stage,
        streaks=streaks,
        gaussian_blur_sigma=anchors.blur_sigma_max * s if stage >= 3 else 0.0,
        motion_blur=(anchors.motion_blur_length, anchors.motion_blur_angle)
        if stage >= 4
        else (0.0, 0.0),
        haze=(anchors.airlight, anchors.haze_strength_max * s) if stage >= 3 else (0.0, 0.0),
        severity=s,
    )


def default_stages(anchors: SeverityAnchors = SeverityAnchors()) -> list:
    return [stage_config(k, anchors) for k in range(1, 5)]


@dataclass(frozen=True)
class CorruptedFrame:
    clean: np.ndarray
    noisy: np.ndarray
    streak_layer: np.ndarray
    mask: np.ndarray
    stage: int
    seed: int


# ---------------------------------------------------------------------------
# Streak rendering
# ---------------------------------------------------------------------------

def render_streaks(width: int, height: int, params: StreakParams, seed: int):
    """Render the additive streak layer and its binary mask.

    Each streak starts at a uniformly sampled anchor and extends away from
    the vanishing point, its direction perturbed by +/- jitter_deg.  Coverage
    is anti-aliased with a 1-pixel linear falloff beyond the half width.
    """
    if width < 1 or height < 1:
        raise ValidationError(f"dimensions must be >= 1, got {width}x{height}")
    params.validate()
    rng = make_rng(seed)
    layer = np.zeros((height, width), dtype=np.float64)
    n_streaks = int(math.floor(params.density * width * height / 1e6 + 0.5))
    vp = np.array([params.vanishing_point[0] * width, params.vanishing_point[1] * height])
    for _ in range(n_streaks):
        ax = rng.uniform(0.0, width)
        ay = rng.uniform(0.0, height)
        jitter = rng.uniform(-params.jitter_deg, params.jitter_deg)
        length = rng.uniform(*params.length_range)
        half_w = rng.uniform(*params.width_range) / 2.0
        opacity = rng.uniform(*params.opacity_range)
        d = np.array([ax, ay]) - vp
        norm = math.hypot(d[0], d[1])
        if norm < 1e-9:
            d = np.array([0.0, 1.0])
        else:
            d = d / norm
        ang = math.atan2(d[1], d[0]) + math.radians(jitter)
        d = np.array([math.cos(ang), math.sin(ang)])
        p0 = np.array([ax, ay])
        p1 = p0 + d * length
        _add_segment(layer, p0, p1, half_w, opacity)
    mask = (layer > MASK_THRESHOLD).astype(np.float64)
    return layer, mask


def _add_segment(layer, p0, p1, half_w, opacity):
    """Accumulate an anti-aliased capsule (segment with round caps)."""
    h, w = layer.shape
    margin = half_w + 1.5
    x_min = max(int(math.floor(min(p0[0], p1[0]) - margin)), 0)
    x_max = min(int(math.ceil(max(p0[0], p1[0]) + margin)), w - 1)
    y_min = max(int(math.floor(min(p0[1], p1[1]) - margin)), 0)
    y_max = min(int(math.ceil(max(p0[1], p1[1]) + margin)), h - 1)
    if x_min > x_max or y_min > y_max:
        return
    ys, xs = np.mgrid[y_min : y_max + 1, x_min : x_max + 1]
    px = xs - p0[0]
    py = ys - p0[1]
    seg = p1 - p0
    seg_len2 = float(seg @ seg)
    if seg_len2 < 1e-12:
        t = np.zeros_like(px)
    else:
        t = np.clip((px * seg[0] + py * seg[1]) / seg_len2, 0.0, 1.0)
    dx = px - t * seg[0]
    dy = py - t * seg[1]
    dist = np.sqrt(dx * dx + dy * dy)
    coverage = np.clip(half_w + 0.5 - dist, 0.0, 1.0)
    layer[y_min : y_max + 1, x_min : x_max + 1] += opacity * coverage


def composite_rain(clean: np.ndarray, streak_layer: np.ndarray) -> np.ndarray:
    """The additive rain model: clamp(clean + layer, 0, 1)."""
    clean = np.asarray(clean, dtype=np.float64)
    layer = np.asarray(streak_layer, dtype=np.float64)
    check_same_shape(clean, layer)
    return np.clip(clean + layer, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Blur and haze
# ---------------------------------------------------------------------------

def _convolve_separable(img, kernel):
    """Reflect-padded separable convolution with a symmetric 1-D kernel."""
    half = kernel.size // 2
    pad = np.pad(img, ((half, half), (0, 0)), mode="reflect")
    t = np.lib.stride_tricks.sliding_window_view(pad, kernel.size, axis=0) @ kernel
    pad = np.pad(t, ((0, 0), (half, half)), mode="reflect")
    return np.lib.stride_tricks.sliding_window_view(pad, kernel.size, axis=1) @ kernel


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64)
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k /= k.sum()
    return _convolve_separable(np.asarray(img, dtype=np.float64), k)


def motion_blur_kernel(length: float, angle_deg: float) -> np.ndarray:
    """Normalised line kernel built with the same anti-aliased rasteriser
    as the streaks."""
    half = int(math.ceil(length / 2.0)) + 1
    size = 2 * half + 1
    k = np.zeros((size, size), dtype=np.float64)
    ang = math.radians(angle_deg)
    d = np.array([math.cos(ang), math.sin(ang)])
    c = np.array([half, half], dtype=np.float64)
    _add_segment(k, c - d * length / 2.0, c + d * length / 2.0, 0.5, 1.0)
    s = k.sum()
    if s <= 0:
        k[half, half] = 1.0
        return k
    return k / s


def motion_blur(img: np.ndarray, length: float, angle_deg: float) -> np.ndarray:
    if length <= 1.0:
        return np.asarray(img, dtype=np.float64)
    k = motion_blur_kernel(length, angle_deg)
    half = k.shape[0] // 2
    img = np.asarray(img, dtype=np.float64)
    pad = np.pad(img, half, mode="reflect")
    out = np.zeros_like(img)
    for di in range(k.shape[0]):
        for dj in range(k.shape[1]):
            kij = k[di, dj]
            if kij != 0.0:
                out += kij * pad[di : di + img.shape[0], dj : dj + img.shape[1]]
    return out


def apply_haze(img: np.ndarray, airlight: float, strength: float) -> np.ndarray:
    if strength <= 0:
        return np.asarray(img, dtype=np.float64)
    return (1.0 - strength) * np.asarray(img, dtype=np.float64) + strength * airlight


def apply_stage(clean: np.ndarray, cfg: StageConfig, seed: int) -> CorruptedFrame:
    """Corrupt one frame: streaks -> clamp -> Gaussian blur -> motion blur
    -> haze.  Stage 1 returns the clean frame and an empty mask."""
    cfg.validate()
    clean = np.asarray(clean, dtype=np.float64)
    h, w = clean.shape
    if cfg.stage == 1:
        zero = np.zeros_like(clean)
        return CorruptedFrame(clean=clean, noisy=clean.copy(), streak_layer=zero,
                              mask=zero.copy(), stage=1, seed=seed)
    layer, mask = render_streaks(w, h, cfg.streaks, seed)
    noisy = composite_rain(clean, layer)
    noisy = gaussian_blur(noisy, cfg.gaussian_blur_sigma)
    noisy = motion_blur(noisy, cfg.motion_blur[0], cfg.motion_blur[1])
    noisy = apply_haze(noisy, cfg.haze[0], cfg.haze[1])
    noisy = np.clip(noisy, 0.0, 1.0)
    return CorruptedFrame(clean=clean, noisy=noisy, streak_layer=layer,
                          mask=mask, stage=cfg.stage, seed=seed)


def recompose(frame: CorruptedFrame, cfg: StageConfig) -> np.ndarray:
    """Re-run the documented composition from the stored clean frame and
    streak layer; equals frame.noisy bit-for-bit."""
    if cfg.stage == 1:
        return frame.clean.copy()
    noisy = composite_rain(frame.clean, frame.streak_layer)
    noisy = gaussian_blur(noisy, cfg.gaussian_blur_sigma)
    noisy = motion_blur(noisy, cfg.motion_blur[0], cfg.motion_blur[1])
    noisy = apply_haze(noisy, cfg.haze[0], cfg.haze[1])
    return np.clip(noisy, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Curriculum builder
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def build_curriculum(
    clean_dataset: Dataset,
    stages,
    out_dir,
    seed: int,
    real_rain_scenes: Dataset | None = None,
    mix_ratio: float = 0.5,
) -> Path:
    """Materialise the five-stage curriculum on disk.

    `stages` must cover stages 1..4.  Stage 5 interleaves real rainy frames
    (emitted with no clean target) with stage-4-severity synthetic triples at
    `mix_ratio` synthetic fraction; without real scenes it falls back to
    purely synthetic stage-4-severity triples generated under stage-5 seeds.
    Rerunning with identical inputs reproduces every byte.
    """
    stages = sorted(stages, key=lambda c: c.stage)
    have = [c.stage for c in stages]
    if have != [1, 2, 3, 4] and have != [1, 2, 3, 4, 5]:
        raise ValidationError(f"stage list must cover stages 1..4, got {have}")
    by_stage = {c.stage: c for c in stages}
    if 5 not in by_stage:
        stage4 = by_stage[4]
        by_stage[5] = replace(stage4, stage=5)
    out_dir = Path(out_dir)
    entries = []

    frames = [
        (scene.scene_id, fr.frame_index, scene_dir / fr.image_path)
        for scene, scene_dir in (
            (sc, clean_dataset.root / "scenes" / sc.scene_id)
            for sc in clean_dataset.scenes
        )
        for fr in scene.frames
    ]
    if not frames:
        raise ValidationError("clean dataset has no frames")

    for stage_idx in range(1, 6):
        cfg = by_stage[stage_idx]
        stage_dir = out_dir / f"stage_{stage_idx}"
        if stage_idx == 5 and real_rain_scenes is not None:
            entries.extend(
                _emit_stage5_mixed(frames, cfg, stage_dir, seed, real_rain_scenes, mix_ratio)
            )
            continue
        for scene_id, frame_index, img_path in frames:
            clean = load_image(img_path)
            frame_seed = derive_seed(seed, scene_id, frame_index, stage_idx)
            frame = apply_stage(clean, cfg, frame_seed)
            entries.append(
                _emit_triple(frame, cfg, stage_dir, out_dir, scene_id, frame_index)
            )

    manifest = {
        "format_version": 1,
        "global_seed": seed,
        "mask_threshold": MASK_THRESHOLD,
        "stages": [
            {"stage": k, "severity": by_stage[k].severity} for k in range(1, 6)
        ],
        "entries": entries,
    }
    dump_json(manifest, out_dir / MANIFEST_NAME)
    return out_dir / MANIFEST_NAME


def _emit_triple(frame: CorruptedFrame, cfg: StageConfig, stage_dir: Path,
                 out_dir: Path, scene_id: str, frame_index: int) -> dict:
    stem = f"{scene_id}_{frame_index:06d}.png"
    noisy_p = stage_dir / "noisy" / stem
    clean_p = stage_dir / "clean" / stem
    mask_p = stage_dir / "mask" / stem
    save_image(frame.noisy, noisy_p)
    save_image(frame.clean, clean_p)
    save_image(frame.mask, mask_p)
    return {
        "stage": cfg.stage,
        "severity": cfg.severity,
        "seed": frame.seed,
        "noisy": str(noisy_p.relative_to(out_dir)),
        "clean": str(clean_p.relative_to(out_dir)),
        "mask": str(mask_p.relative_to(out_dir)),
    }


def _emit_stage5_mixed(frames, cfg, stage_dir, seed, real_rain_scenes, mix_ratio):
    entries = []
    for scene_id, frame_index, img_path in frames:
        clean = load_image(img_path)
        frame_seed = derive_seed(seed, scene_id, frame_index, 5)
        frame = apply_stage(clean, cfg, frame_seed)
        entries.append(
            _emit_triple(frame, cfg, stage_dir, stage_dir.parent, scene_id, frame_index)
        )
    n_synth = len(entries)
    n_real_target = int(round(n_synth * (1.0 - mix_ratio) / max(mix_ratio, 1e-9)))
    real_frames = [
        (sc.scene_id, fr.frame_index,
         real_rain_scenes.root / "scenes" / sc.scene_id / fr.image_path)
        for sc in real_rain_scenes.scenes
        for fr in sc.frames
    ]
    for scene_id, frame_index, img_path in real_frames[:n_real_target]:
        img = load_image(img_path)
        stem = f"real_{scene_id}_{frame_index:06d}.png"
        noisy_p = stage_dir / "noisy" / stem
        save_image(img, noisy_p)
        entries.append(
            {
                "stage": 5,
                "severity": cfg.severity,
                "seed": 0,
                "noisy": str(noisy_p.relative_to(stage_dir.parent)),
                "clean": None,
                "mask": None,
            }
        )
    return entries
