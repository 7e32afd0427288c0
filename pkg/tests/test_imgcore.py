"""Image I/O and dataset model tests."""

import numpy as np
import pytest

from nightrain.errors import ValidationError
from nightrain.imgcore import (
    Dataset,
    FrameRecord,
    InstanceAnnotation,
    Scene,
    SummaryCounts,
    VehicleRecord,
    dump_json,
    gray_image,
    load_dataset,
    load_image,
    save_image,
    scene_to_json,
    summarize_scenes,
    write_scene,
)
from nightrain.rng import make_rng


def test_load_8bit_endpoint_scaling(tmp_path):
    save_image(np.array([[0.0, 1.0]]), tmp_path / "a.png")
    img = load_image(tmp_path / "a.png")
    assert img.shape == (1, 2)
    assert img[0, 0] == 0.0
    assert img[0, 1] == 1.0


def test_load_8bit_midpoint(tmp_path):
    from PIL import Image

    Image.fromarray(np.array([[128]], dtype=np.uint8), mode="L").save(tmp_path / "m.png")
    img = load_image(tmp_path / "m.png")
    assert img[0, 0] == 128 / 255


def test_rgb_collapses_with_bt709_weights(tmp_path):
    from PIL import Image

    rgb = np.zeros((1, 1, 3), dtype=np.uint8)
    rgb[0, 0] = (255, 0, 0)
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "r.png")
    img = load_image(tmp_path / "r.png")
    assert img[0, 0] == pytest.approx(0.2126, abs=1e-12)


def test_load_16bit(tmp_path):
    from PIL import Image

    arr = np.array([[0, 65535]], dtype=np.uint16)
    Image.fromarray(arr).save(tmp_path / "s.png")
    img = load_image(tmp_path / "s.png")
    assert img[0, 0] == 0.0
    assert img[0, 1] == 1.0


def test_missing_file_raises():
    with pytest.raises(ValidationError, match="not found"):
        load_image("/nonexistent/nowhere.png")


def test_unsupported_mode_raises(tmp_path):
    from PIL import Image

    Image.new("CMYK", (2, 2)).save(tmp_path / "c.tif")
    with pytest.raises(ValidationError, match="unsupported"):
        load_image(tmp_path / "c.tif")


def test_roundtrip_endpoints_exact(tmp_path):
    img = np.array([[0.0, 1.0]])
    save_image(img, tmp_path / "e.png")
    back = load_image(tmp_path / "e.png")
    assert np.array_equal(back, img)


def test_roundtrip_half_step_bound(tmp_path):
    save_image(np.array([[0.5]]), tmp_path / "h.png")
    assert abs(load_image(tmp_path / "h.png")[0, 0] - 0.5) <= 1 / 510


def test_roundtrip_random_images_within_quantization(tmp_path):
    rng = make_rng(100)
    for i in range(10):
        img = rng.uniform(0, 1, size=(3, 3))
        save_image(img, tmp_path / f"r{i}.png")
        back = load_image(tmp_path / f"r{i}.png")
        assert np.abs(back - img).max() <= 1 / 510


def test_save_is_bit_deterministic(tmp_path):
    rng = make_rng(4)
    img = rng.uniform(0, 1, size=(16, 16))
    save_image(img, tmp_path / "a.png")
    save_image(img, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_gray_image_validation():
    with pytest.raises(ValidationError):
        gray_image(np.array([0.0, 1.0]))  # 1-D
    with pytest.raises(ValidationError):
        gray_image(np.array([[1.5]]))  # out of range
    with pytest.raises(ValidationError):
        gray_image(np.empty((0, 3)))
    frozen = gray_image(np.array([[0.5]]))
    with pytest.raises(ValueError):
        frozen[0, 0] = 0.2  # read-only


# ---------------------------------------------------------------------------
# Dataset model
# ---------------------------------------------------------------------------

def _make_scene(scene_id, n_frames=3, width=32, height=24, kind="direct"):
    frames = []
    for f in range(n_frames):
        inst = InstanceAnnotation(kind=kind, bbox=(4, 4, 8, 8), keypoint=(8, 8))
        frames.append(
            FrameRecord(
                frame_index=f,
                image_path=f"images/frame_{f:06d}.png",
                vehicles=(VehicleRecord(vehicle_id=0, instances=(inst,)),),
            )
        )
    return Scene(scene_id=scene_id, time_of_day="night", frames=tuple(frames),
                 width=width, height=height)


def _write_fixture(root, n_scenes=2, n_frames=3):
    rng = make_rng(1)
    for i in range(n_scenes):
        scene = _make_scene(f"s{i:02d}", n_frames)
        images = {f: rng.uniform(0, 1, size=(24, 32)) for f in range(n_frames)}
        write_scene(scene, images, root)
    return root


def test_load_dataset_fixture(tmp_path):
    _write_fixture(tmp_path, n_scenes=2, n_frames=3)
    ds = load_dataset(tmp_path)
    assert len(ds.scenes) == 2
    assert ds.summary["night"].scenes == 2
    assert ds.summary["night"].images == 6
    assert ds.summary["night"].vehicle_positions == 6
    assert ds.summary["night"].instances == 6


def test_summary_is_pure_recomputation(tmp_path):
    _write_fixture(tmp_path)
    ds = load_dataset(tmp_path)
    assert summarize_scenes(ds.scenes) == ds.summary


def test_pvdn_scale_summary_representable():
    counts = SummaryCounts(scenes=145, images=25264,
                           vehicle_positions=26615, instances=72304)
    assert counts.scenes == 145
    assert counts.images == 25264
    assert counts.vehicle_positions == 26615
    assert counts.instances == 72304


def test_keypoint_outside_bbox_names_frame(tmp_path):
    scene = _make_scene("bad")
    bad_inst = InstanceAnnotation(kind="direct", bbox=(4, 4, 8, 8), keypoint=(20, 20))
    frames = list(scene.frames)
    frames[1] = FrameRecord(
        frame_index=1,
        image_path=frames[1].image_path,
        vehicles=(VehicleRecord(vehicle_id=0, instances=(bad_inst,)),),
    )
    rng = make_rng(2)
    images = {f: rng.uniform(0, 1, size=(24, 32)) for f in range(3)}
    write_scene(
        Scene(scene_id="bad", time_of_day="night", frames=tuple(frames),
              width=32, height=24),
        images, tmp_path,
    )
    with pytest.raises(ValidationError, match="frame 1"):
        load_dataset(tmp_path)


def test_bbox_out_of_bounds_rejected(tmp_path):
    inst = InstanceAnnotation(kind="direct", bbox=(28, 4, 8, 8), keypoint=(30, 6))
    scene = Scene(
        scene_id="oob", time_of_day="night",
        frames=(FrameRecord(0, "images/frame_000000.png",
                            (VehicleRecord(0, (inst,)),)),),
        width=32, height=24,
    )
    rng = make_rng(3)
    write_scene(scene, {0: rng.uniform(0, 1, (24, 32))}, tmp_path)
    with pytest.raises(ValidationError, match="outside image bounds"):
        load_dataset(tmp_path)


def test_missing_image_reported(tmp_path):
    _write_fixture(tmp_path, n_scenes=1)
    (tmp_path / "scenes" / "s00" / "images" / "frame_000001.png").unlink()
    with pytest.raises(ValidationError, match="missing image"):
        load_dataset(tmp_path)


def test_duplicate_vehicle_id_rejected(tmp_path):
    inst = InstanceAnnotation(kind="direct", bbox=(4, 4, 8, 8), keypoint=(8, 8))
    scene = Scene(
        scene_id="dup", time_of_day="night",
        frames=(FrameRecord(0, "images/frame_000000.png",
                            (VehicleRecord(0, (inst,)), VehicleRecord(0, (inst,)))),),
        width=32, height=24,
    )
    rng = make_rng(5)
    write_scene(scene, {0: rng.uniform(0, 1, (24, 32))}, tmp_path)
    with pytest.raises(ValidationError, match="duplicate vehicle id"):
        load_dataset(tmp_path)


def test_scene_enumeration_is_lexicographic(tmp_path):
    for sid in ("s10", "s02", "s01"):
        scene = _make_scene(sid, n_frames=1)
        rng = make_rng(6)
        write_scene(scene, {0: rng.uniform(0, 1, (24, 32))}, tmp_path)
    ds = load_dataset(tmp_path)
    assert [s.scene_id for s in ds.scenes] == ["s01", "s02", "s10"]


def test_scene_json_roundtrip(tmp_path):
    scene = _make_scene("rt", n_frames=2)
    doc = scene_to_json(scene)
    from nightrain.imgcore import scene_from_json

    back = scene_from_json(doc, width=32, height=24)
    assert back.scene_id == scene.scene_id
    assert len(back.frames) == 2
    assert back.frames[0].vehicles[0].instances[0].kind == "direct"
