"""Scripted scenes, evaluation metrics, fps measurement, reports."""

import numpy as np
import pytest

from nightrain.config import AppConfig
from nightrain.detect import Proposal
from nightrain.errors import ValidationError
from nightrain.harness import (
    LightSpec,
    SceneEval,
    ScriptedScene,
    aggregate,
    approaching_vehicle_scene,
    early_warning_hit,
    match_instances,
    measure_fps,
    render_frame,
    script_scene,
    write_ab_csv,
    write_metrics_svg,
    write_per_scene_csv,
)
from nightrain.harness.pipeline import EvalReport
from nightrain.imgcore import load_dataset, load_image
from nightrain.rng import make_rng


def _prop(x, y):
    return Proposal(bbox=(int(x) - 2, int(y) - 2, 5, 5), centroid=(x, y),
                    area=25, peak_intensity=0.9, saliency_score=1.0)


# ---------------------------------------------------------------------------
# Scripted scenes
# ---------------------------------------------------------------------------

def test_approaching_scene_widths_strictly_increase(tmp_path):
    spec = approaching_vehicle_scene("appr", seed=4, n_frames=20)
    scene = script_scene(spec, seed=4, out_root=tmp_path)
    widths = []
    for fr in scene.frames:
        for veh in fr.vehicles:
            for inst in veh.instances:
                if inst.kind == "direct":
                    widths.append(inst.bbox[2])
    assert len(widths) >= 4
    for a, b in zip(widths, widths[2:]):  # pairs per frame: compare same lamp
        assert b > a


def test_script_scene_deterministic_bytes(tmp_path):
    spec = approaching_vehicle_scene("det", seed=9, n_frames=6)
    script_scene(spec, seed=9, out_root=tmp_path / "a")
    script_scene(spec, seed=9, out_root=tmp_path / "b")
    files_a = sorted((tmp_path / "a").rglob("*.png"))
    files_b = sorted((tmp_path / "b").rglob("*.png"))
    assert len(files_a) == 6
    for fa, fb in zip(files_a, files_b):
        assert fa.read_bytes() == fb.read_bytes()
    ann_a = (tmp_path / "a" / "scenes" / "det" / "annotations.json").read_bytes()
    ann_b = (tmp_path / "b" / "scenes" / "det" / "annotations.json").read_bytes()
    assert ann_a == ann_b


def test_rendered_blob_centroid_matches_spec(tmp_path):
    light = LightSpec("direct", 0, 0, 9, (40.0, 40.0), (30.0, 30.0),
                      (2.0, 2.0), (0.9, 0.9))
    spec = ScriptedScene(scene_id="cen", width=96, height=64, n_frames=1,
                         lights=(light,), first_reflection_frame=0,
                         first_direct_frame=0, texture_amp=0.0,
                         background_base=0.05)
    img = render_frame(spec, 0, seed=2)
    blob = img - 0.05
    ys, xs = np.mgrid[0:64, 0:96]
    cx = float((xs * blob).sum() / blob.sum())
    cy = float((ys * blob).sum() / blob.sum())
    assert abs(cx - 40.0) <= 0.5
    assert abs(cy - 30.0) <= 0.5


def test_scene_validates_markers_and_visibility():
    bad = ScriptedScene(scene_id="bad", first_reflection_frame=9,
                        first_direct_frame=3)
    with pytest.raises(ValidationError, match="first_reflection_frame"):
        bad.validate()
    off = ScriptedScene(
        scene_id="off", width=32, height=32, n_frames=4,
        lights=(LightSpec("direct", 0, 0, 3, (-50, -50), (-50, -50),
                          (2, 2), (0.9, 0.9)),),
        first_reflection_frame=0, first_direct_frame=0,
    )
    with pytest.raises(ValidationError, match="off frame"):
        off.validate()


def test_scripted_scene_loadable_as_dataset(tmp_path):
    spec = approaching_vehicle_scene("load", seed=5, n_frames=8)
    script_scene(spec, seed=5, out_root=tmp_path)
    ds = load_dataset(tmp_path)
    scene = ds.scenes[0]
    assert scene.markers["first_reflection_frame"] == spec.first_reflection_frame
    assert scene.markers["first_direct_frame"] == spec.first_direct_frame
    img = load_image(tmp_path / "scenes" / "load" / scene.frames[0].image_path)
    assert img.shape == (spec.height, spec.width)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def test_match_instances_greedy_by_distance():
    gt = [(10.0, 10.0), (30.0, 10.0)]
    props = [_prop(11.0, 10.0), _prop(29.0, 10.0), _prop(50.0, 50.0)]
    matches = match_instances(gt, props, radius=10.0)
    assert {(g, p) for g, p, _ in matches} == {(0, 0), (1, 1)}


def test_match_instances_one_to_one():
    gt = [(10.0, 10.0), (12.0, 10.0)]
    props = [_prop(11.0, 10.0)]
    matches = match_instances(gt, props, radius=10.0)
    assert len(matches) == 1
    assert matches[0][0] == 0  # nearest GT wins the single proposal


def test_recall_trivial_extremes():
    full = SceneEval("a", gt_instances=5, matched=5)
    none = SceneEval("b", gt_instances=5, matched=0)
    assert full.recall_pct == 100.0
    assert none.recall_pct == 0.0


def test_recall_hand_fixture_two_thirds():
    agg = aggregate([SceneEval("a", gt_instances=3, matched=2)])
    assert agg["proposal_recall_pct"] == pytest.approx(66.6667, abs=1e-3)


def test_accuracy_hand_values():
    evals = [SceneEval("a", gt_instances=10, matched=10,
                       label_correct=7, label_total=10)]
    assert aggregate(evals)["classifier_accuracy_pct"] == pytest.approx(70.0)
    evals = [SceneEval("a", gt_instances=4, matched=4, label_correct=2, label_total=4)]
    assert aggregate(evals)["classifier_accuracy_pct"] == pytest.approx(50.0)


def test_early_warning_boundaries():
    from nightrain.imgcore import FrameRecord, Scene

    def scene_with(markers):
        return Scene(scene_id="s", time_of_day="night",
                     frames=(FrameRecord(0, "images/frame_000000.png", ()),),
                     width=8, height=8, markers=markers)

    scene = scene_with({"first_reflection_frame": 3, "first_direct_frame": 7})
    hit = [(3, [{"verdict": "likely_present"}])]
    assert early_warning_hit(scene, hit)  # inclusive lower bound
    late = [(7, [{"verdict": "likely_present"}])]
    assert not early_warning_hit(scene, late)  # exclusive upper bound
    none = [(5, [{"verdict": "candidate"}])]
    assert not early_warning_hit(scene, none)
    with pytest.raises(ValidationError, match="marker"):
        early_warning_hit(scene_with({}), hit)


def test_early_warning_aggregate_hand_fixture():
    evals = [SceneEval(f"s{i}", gt_instances=1, matched=1,
                       early_warning_success=(i < 3)) for i in range(5)]
    assert aggregate(evals)["early_warning_pct"] == pytest.approx(60.0)


def test_aggregate_recomputable_from_per_scene_csv(tmp_path):
    evals = [
        SceneEval("a", gt_instances=10, matched=7, label_correct=5,
                  label_total=7, early_warning_success=True),
        SceneEval("b", gt_instances=20, matched=12, label_correct=9,
                  label_total=12, early_warning_success=False),
    ]
    agg = aggregate(evals)
    write_per_scene_csv(evals, tmp_path / "per.csv")
    import csv

    with open(tmp_path / "per.csv") as fh:
        rows = list(csv.DictReader(fh))
    gt = sum(int(r["gt_instances"]) for r in rows)
    matched = sum(int(r["matched"]) for r in rows)
    assert 100.0 * matched / gt == agg["proposal_recall_pct"]
    lc = sum(int(r["label_correct"]) for r in rows)
    lt = sum(int(r["label_total"]) for r in rows)
    assert 100.0 * lc / lt == agg["classifier_accuracy_pct"]
    ew = sum(int(r["early_warning_success"]) for r in rows)
    assert 100.0 * ew / len(rows) == agg["early_warning_pct"]


# ---------------------------------------------------------------------------
# FPS
# ---------------------------------------------------------------------------

def test_measure_fps_positive_and_rejects_few_frames():
    frames = [np.zeros((8, 8))] * 60
    fps = measure_fps(lambda img: img.sum(), frames)
    assert fps > 0
    with pytest.raises(ValidationError):
        measure_fps(lambda img: img, frames[:20])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _report(variant, recall=80.0, fps=25.0):
    return EvalReport(variant=variant, config_hash="deadbeef",
                      proposal_recall_pct=recall, classifier_accuracy_pct=75.0,
                      early_warning_pct=60.0, avg_fps=fps, per_scene=[])


def test_ab_csv_schema_and_config_hash(tmp_path):
    write_ab_csv([_report("raw"), _report("denoised", recall=90.0)],
                 tmp_path / "report.csv")
    text = (tmp_path / "report.csv").read_text().splitlines()
    assert text[0] == ("variant,config_hash,proposal_recall_pct,"
                       "classifier_accuracy_pct,early_warning_pct")
    assert text[1].startswith("raw,deadbeef,")
    assert text[2].startswith("denoised,deadbeef,")
    assert "avg_fps" not in text[0]  # timing lives in timing.csv


def test_svg_deterministic_and_contains_metrics(tmp_path):
    reports = [_report("raw"), _report("denoised", recall=90.0)]
    write_metrics_svg(reports, tmp_path / "a.svg")
    write_metrics_svg(reports, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    svg = (tmp_path / "a.svg").read_text()
    assert svg.startswith("<svg")
    assert "Proposal recall" in svg
    assert "Early warning" in svg


def test_config_hash_stable_and_sensitive():
    a = AppConfig()
    b = AppConfig()
    assert a.config_hash() == b.config_hash()
    import dataclasses

    from nightrain.photometric import PhotometricConfig

    c = dataclasses.replace(a, photometric=PhotometricConfig(gamma=0.8))
    assert c.config_hash() != a.config_hash()
