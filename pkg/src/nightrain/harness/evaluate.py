"""Evaluation metrics over scripted scenes.

Ground-truth matching is one-to-one greedy by ascending centre distance with
a radius cutoff (keypoints are the primary annotation, so no IoU).  Recall
aggregates matched / total instances across scenes; classifier accuracy is
measured over matched proposals only; early warning succeeds for a scene
when some track reaches "likely present" at a frame f with
first_reflection_frame <= f < first_direct_frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..imgcore import Scene

DEFAULT_MATCH_RADIUS = 10.0


def match_instances(gt_points, proposals, radius: float = DEFAULT_MATCH_RADIUS):
    """Greedy one-to-one matching by ascending centre distance.

    gt_points: list of (x, y); proposals: list with .centroid.
    Returns list of (gt_index, proposal_index, distance).
    """
    cands = []
    for gi, (gx, gy) in enumerate(gt_points):
        for pi, prop in enumerate(proposals):
            px, py = prop.centroid
            d = float(np.hypot(px - gx, py - gy))
            if d <= radius:
                cands.append((d, gi, pi))
    cands.sort()
    used_g, used_p = set(), set()
    matches = []
    for d, gi, pi in cands:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        matches.append((gi, pi, d))
    return matches


def gt_label(inst_kind: str, vehicle_kind: str) -> str:
    """Supervision mapping: direct lights are headlights (or taillights for
    a leading vehicle); reflections count as artifact."""
    if inst_kind == "direct":
        return "taillight" if vehicle_kind == "leading" else "headlight"
    return "artifact"


@dataclass
class SceneEval:
    scene_id: str
    gt_instances: int = 0
    matched: int = 0
    label_correct: int = 0
    label_total: int = 0
    early_warning_success: bool = False

    @property
    def recall_pct(self) -> float:
        return 100.0 * self.matched / self.gt_instances if self.gt_instances else 0.0


def evaluate_scene(scene: Scene, per_frame_detections, per_frame_decisions,
                   radius: float = DEFAULT_MATCH_RADIUS) -> SceneEval:
    """Score one scene given detect-stage output and per-frame decisions.

    per_frame_detections: list of (frame_index, proposals, classified, pairs)
    per_frame_decisions: list of (frame_index, [Decision-like dicts]) or None
    """
    ev = SceneEval(scene_id=scene.scene_id)
    det_by_frame = {fi: (props, cls) for fi, props, cls, _ in per_frame_detections}
    for fr in scene.frames:
        gt = [
            (inst.keypoint, gt_label(inst.kind, scene.vehicle_kind))
            for veh in fr.vehicles
            for inst in veh.instances
        ]
        ev.gt_instances += len(gt)
        if fr.frame_index not in det_by_frame:
            raise ValidationError(
                f"scene {scene.scene_id}: no detections for frame {fr.frame_index}"
            )
        proposals, classified = det_by_frame[fr.frame_index]
        matches = match_instances([pt for pt, _ in gt], proposals, radius)
        ev.matched += len(matches)
        for gi, pi, _ in matches:
            ev.label_total += 1
            if classified[pi].label == gt[gi][1]:
                ev.label_correct += 1
    if per_frame_decisions is not None:
        ev.early_warning_success = early_warning_hit(scene, per_frame_decisions)
    return ev


def early_warning_hit(scene: Scene, per_frame_decisions) -> bool:
    """True when some likely_present decision lands in
    [first_reflection_frame, first_direct_frame)."""
    markers = scene.markers or {}
    if "first_reflection_frame" not in markers or "first_direct_frame" not in markers:
        raise ValidationError(
            f"scene {scene.scene_id} lacks early-warning marker frames"
        )
    lo = markers["first_reflection_frame"]
    hi = markers["first_direct_frame"]
    for frame_index, decisions in per_frame_decisions:
        if lo <= frame_index < hi and any(
            d["verdict"] == "likely_present" for d in decisions
        ):
            return True
    return False


def aggregate(evals) -> dict:
    """Micro-averaged percentages over per-scene tallies."""
    evals = list(evals)
    gt = sum(e.gt_instances for e in evals)
    matched = sum(e.matched for e in evals)
    lt = sum(e.label_total for e in evals)
    lc = sum(e.label_correct for e in evals)
    ew = sum(1 for e in evals if e.early_warning_success)
    return {
        "proposal_recall_pct": 100.0 * matched / gt if gt else 0.0,
        "classifier_accuracy_pct": 100.0 * lc / lt if lt else 0.0,
        "early_warning_pct": 100.0 * ew / len(evals) if evals else 0.0,
    }


def eval_proposals(per_scene_matched, per_scene_total) -> float:
    total = sum(per_scene_total)
    return 100.0 * sum(per_scene_matched) / total if total else 0.0


def measure_fps(process_frame, frames, warmup: int = 5, min_frames: int = 50):
    """Wall-clock frames/second of `process_frame` over `frames`.

    The first `warmup` frames are processed but excluded from timing.
    Requires at least `min_frames` frames beyond the warm-up.
    """
    frames = list(frames)
    if len(frames) < warmup + min_frames:
        raise ValidationError(
            f"need >= {warmup + min_frames} frames for fps, got {len(frames)}"
        )
    for img in frames[:warmup]:
        process_frame(img)
    start = time.perf_counter()
    for img in frames[warmup:]:
        process_frame(img)
    elapsed = time.perf_counter() - start
    n = len(frames) - warmup
    return n / elapsed if elapsed > 0 else float("inf")
