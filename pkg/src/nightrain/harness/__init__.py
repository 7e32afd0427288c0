"""Evaluation harness: scripted scenes, metrics, and pipeline orchestration."""

from .evaluate import (
    SceneEval,
    aggregate,
    early_warning_hit,
    evaluate_scene,
    gt_label,
    match_instances,
    measure_fps,
)
from .pipeline import (
    EvalReport,
    build_scene_suite,
    collect_classifier_examples,
    corrupt_suite,
    fit_suite_classifier,
    process_frame,
    run_ab,
    run_pipeline,
    run_scene,
)
from .report import (
    read_ab_csv,
    write_ab_csv,
    write_metrics_svg,
    write_per_scene_csv,
    write_timing_csv,
)
from .scripted import (
    LightSpec,
    ScriptedScene,
    approaching_vehicle_scene,
    render_frame,
    script_scene,
)

__all__ = [
    "EvalReport",
    "LightSpec",
    "SceneEval",
    "ScriptedScene",
    "aggregate",
    "approaching_vehicle_scene",
    "build_scene_suite",
    "collect_classifier_examples",
    "corrupt_suite",
    "early_warning_hit",
    "evaluate_scene",
    "fit_suite_classifier",
    "gt_label",
    "match_instances",
    "measure_fps",
    "process_frame",
    "read_ab_csv",
    "render_frame",
    "run_ab",
    "run_pipeline",
    "run_scene",
    "script_scene",
    "write_ab_csv",
    "write_metrics_svg",
    "write_per_scene_csv",
    "write_timing_csv",
]
