"""Light proposals, classification, pairing, and temporal tracking on a
clean scripted scene.

Run:  python demos/demo_detection_tracking.py
"""

import tempfile
from pathlib import Path

from nightrain.config import AppConfig
from nightrain.detect import DetectConfig, classify, pair, propose, saliency_map
from nightrain.harness import approaching_vehicle_scene, script_scene
from nightrain.harness.pipeline import build_scene_suite, fit_suite_classifier
from nightrain.imgcore import load_image
from nightrain.photometric import enhance
from nightrain.track import Tracker, measurements_from_detections
from nightrain.detect import unpaired

cfg = AppConfig()
work = Path(tempfile.mkdtemp(prefix="nightrain_demo_"))

train_suite = build_scene_suite(work / "train", cfg, seed=601, n_scenes=6, prefix="t")
classifier = fit_suite_classifier(train_suite, cfg)
print("classifier fitted on", len(train_suite.scenes), "scenes")

spec = approaching_vehicle_scene("demo", seed=31)
scene = script_scene(spec, seed=31, out_root=work / "suite")
scene_dir = work / "suite" / "scenes" / "demo"
det_cfg = DetectConfig.for_image(spec.width, spec.height)
tracker = Tracker(cfg.tracker, cfg.thresholds)

print(f"reflections from frame {spec.first_reflection_frame}, "
      f"direct lights from frame {spec.first_direct_frame}\n")
print("frame  props pairs tracks  decisions")
for fr in scene.frames:
    img = enhance(load_image(scene_dir / fr.image_path), cfg.photometric)
    sal = saliency_map(img)
    proposals = propose(sal, det_cfg, img=img)
    classified = classify(classifier, img, proposals)
    pairs = pair(classified, det_cfg)
    meas = measurements_from_detections(pairs, unpaired(classified, pairs))
    decisions = tracker.step(meas)
    flagged = [f"#{d.track_id}:{'+'.join(d.reasons)}" for d in decisions
               if d.verdict == "likely_present"]
    if fr.frame_index % 3 == 0 or flagged:
        print(f"  {fr.frame_index:3d}    {len(proposals):2d}    {len(pairs):2d}"
              f"     {len(tracker.tracks):2d}    {'; '.join(flagged) or '-'}")
