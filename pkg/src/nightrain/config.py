"""TOML configuration loading and the canonical config hash.

Every CLI subcommand takes --config; omitted keys fall back to the defaults
below, which match the dataclass defaults across the toolkit.  The config
hash is the SHA-256 of the resolved semantic settings (no filesystem paths),
so A/B runs can prove they differed only where intended.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .denoise import LossWeights, TrainConfig
from .errors import ValidationError
from .photometric import PhotometricConfig
from .quality import SsimConfig
from .rainsim import SeverityAnchors
from .track import DecisionThresholds, TrackerConfig


@dataclass(frozen=True)
class EvalConfig:
    match_radius: float = 10.0
    scene_width: int = 128
    scene_height: int = 96
    n_scenes: int = 20
    n_frames: int = 45
    corrupt_stage: int = 3
    tau: float = 0.85
    a_min: int = 4
    a_max: int = 2000
    eps_y_frac: float = 0.02
    d_min_frac: float = 0.05
    d_max_frac: float = 0.5


@dataclass(frozen=True)
class AppConfig:
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    anchors: SeverityAnchors = field(default_factory=SeverityAnchors)
    mix_ratio: float = 0.5
    ssim: SsimConfig = field(default_factory=SsimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    thresholds: DecisionThresholds = field(default_factory=DecisionThresholds)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return {
            "photometric": {
                "gamma": self.photometric.gamma,
                "clahe_tiles": list(self.photometric.clahe_tiles),
                "clip_limit": self.photometric.clip_limit,
                "bins": self.photometric.bins,
            },
            "rain": {
                "density_max": self.anchors.density_max,
                "opacity_mid_max": self.anchors.opacity_mid_max,
                "opacity_halfwidth": self.anchors.opacity_halfwidth,
                "blur_sigma_max": self.anchors.blur_sigma_max,
                "haze_strength_max": self.anchors.haze_strength_max,
                "airlight": self.anchors.airlight,
                "motion_blur_length": self.anchors.motion_blur_length,
                "motion_blur_angle": self.anchors.motion_blur_angle,
                "vanishing_point": list(self.anchors.vanishing_point),
                "jitter_by_stage": list(self.anchors.jitter_by_stage),
            },
            "curriculum": {"mix_ratio": self.mix_ratio},
            "ssim": {
                "window": self.ssim.window,
                "gaussian_sigma": self.ssim.gaussian_sigma,
                "k1": self.ssim.k1,
                "k2": self.ssim.k2,
                "dynamic_range": self.ssim.dynamic_range,
            },
            "train": {
                "patch_size": self.train.patch_size,
                "batch_size": self.train.batch_size,
                "steps_per_stage": self.train.steps_per_stage,
                "learning_rate": self.train.learning_rate,
                "lr_final_fraction": self.train.lr_final_fraction,
                "candidates": self.train.candidates,
                "beta1": self.train.beta1,
                "beta2": self.train.beta2,
                "eps": self.train.eps,
                "seed": self.train.seed,
            },
            "loss": {
                "lambda_mse": self.loss.lambda_mse,
                "lambda_percept": self.loss.lambda_percept,
                "lambda_mask": self.loss.lambda_mask,
            },
            "track": {
                "q_pos": self.tracker.q_pos,
                "q_vel": self.tracker.q_vel,
                "r_meas": self.tracker.r_meas,
                "gate": self.tracker.gate,
                "birth_hits": self.tracker.birth_hits,
                "death_misses": self.tracker.death_misses,
                "conf_thresh": self.thresholds.conf_thresh,
                "expand_window": self.thresholds.expand_window,
                "expand_min_slope": self.thresholds.expand_min_slope,
            },
            "eval": {
                "match_radius": self.eval.match_radius,
                "scene_width": self.eval.scene_width,
                "scene_height": self.eval.scene_height,
                "n_scenes": self.eval.n_scenes,
                "n_frames": self.eval.n_frames,
                "corrupt_stage": self.eval.corrupt_stage,
                "tau": self.eval.tau,
                "a_min": self.eval.a_min,
                "a_max": self.eval.a_max,
                "eps_y_frac": self.eval.eps_y_frac,
                "d_min_frac": self.eval.d_min_frac,
                "d_max_frac": self.eval.d_max_frac,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path=None) -> AppConfig:
    """Parse a TOML config file into an AppConfig (defaults when absent)."""
    doc = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            doc = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"invalid TOML in {path}: {exc}") from exc
    try:
        pm = doc.get("photometric", {})
        photometric = PhotometricConfig(
            gamma=pm.get("gamma", 0.7),
            clahe_tiles=tuple(pm.get("clahe_tiles", (8, 8))),
            clip_limit=pm.get("clip_limit", 2.0),
            bins=pm.get("bins", 256),
        )
        rn = doc.get("rain", {})
        anchors = SeverityAnchors(
            density_max=rn.get("density_max", 9000.0),
            opacity_mid_max=rn.get("opacity_mid_max", 0.55),
            opacity_halfwidth=rn.get("opacity_halfwidth", 0.1),
            blur_sigma_max=rn.get("blur_sigma_max", 1.8),
            haze_strength_max=rn.get("haze_strength_max", 0.55),
            airlight=rn.get("airlight", 0.35),
            motion_blur_length=rn.get("motion_blur_length", 6.0),
            motion_blur_angle=rn.get("motion_blur_angle", 45.0),
            vanishing_point=tuple(rn.get("vanishing_point", (0.5, 0.5))),
            jitter_by_stage=tuple(rn.get("jitter_by_stage", (0.0, 5.0, 60.0, 20.0, 20.0))),
        )
        cu = doc.get("curriculum", {})
        ss = doc.get("ssim", {})
        ssim_cfg = SsimConfig(
            window=ss.get("window", 7),
            gaussian_sigma=ss.get("gaussian_sigma", 1.5),
            k1=ss.get("k1", 0.01),
            k2=ss.get("k2", 0.03),
            dynamic_range=ss.get("dynamic_range", 1.0),
        )
        tr = doc.get("train", {})
        train = TrainConfig(
            patch_size=tr.get("patch_size", 64),
            batch_size=tr.get("batch_size", 8),
            steps_per_stage=tr.get("steps_per_stage", 500),
            learning_rate=tr.get("learning_rate", 1e-3),
            lr_final_fraction=tr.get("lr_final_fraction", 1.0),
            candidates=tr.get("candidates", 3),
            beta1=tr.get("beta1", 0.9),
            beta2=tr.get("beta2", 0.999),
            eps=tr.get("eps", 1e-8),
            seed=tr.get("seed", 0),
        )
        lo = doc.get("loss", {})
        loss_w = LossWeights(
            lambda_mse=lo.get("lambda_mse", 1.0),
            lambda_percept=lo.get("lambda_percept", 0.5),
            lambda_mask=lo.get("lambda_mask", 0.5),
        )
        tk = doc.get("track", {})
        tracker = TrackerConfig(
            q_pos=tk.get("q_pos", 1e-2),
            q_vel=tk.get("q_vel", 1e-1),
            r_meas=tk.get("r_meas", 1.0),
            gate=tk.get("gate", 50.0),
            birth_hits=tk.get("birth_hits", 2),
            death_misses=tk.get("death_misses", 3),
        )
        thresholds = DecisionThresholds(
            conf_thresh=tk.get("conf_thresh", 0.7),
            expand_window=tk.get("expand_window", 5),
            expand_min_slope=tk.get("expand_min_slope", 0.5),
        )
        ev = doc.get("eval", {})
        eval_cfg = EvalConfig(
            match_radius=ev.get("match_radius", 10.0),
            scene_width=ev.get("scene_width", 128),
            scene_height=ev.get("scene_height", 96),
            n_scenes=ev.get("n_scenes", 20),
            n_frames=ev.get("n_frames", 45),
            corrupt_stage=ev.get("corrupt_stage", 3),
            tau=ev.get("tau", 0.85),
            a_min=ev.get("a_min", 4),
            a_max=ev.get("a_max", 2000),
            eps_y_frac=ev.get("eps_y_frac", 0.02),
            d_min_frac=ev.get("d_min_frac", 0.05),
            d_max_frac=ev.get("d_max_frac", 0.5),
        )
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"bad config value: {exc}") from exc
    return AppConfig(
        photometric=photometric,
        anchors=anchors,
        mix_ratio=cu.get("mix_ratio", 0.5),
        ssim=ssim_cfg,
        train=train,
        loss=loss_w,
        tracker=tracker,
        thresholds=thresholds,
        eval=eval_cfg,
    )
