"""Image and dataset domain model.

Images are 2-D float64 numpy arrays with intensities in [0, 1]; helpers here
construct, validate, and serialise them.  PNG writing uses a built-in encoder
(8-bit grayscale, fixed zlib level, no ancillary chunks) so identical pixels
always produce identical bytes.  Reading goes through Pillow and accepts
8/16-bit grayscale plus RGB, which is collapsed to luminance with BT.709
weights.

Datasets live on disk as::

    root/scenes/<scene_id>/images/frame_<6-digit index>.png
    root/scenes/<scene_id>/annotations.json

Loaded images and dataset records are frozen after construction and safe to
share across parallel workers; scene enumeration is lexicographic, so loading
order never depends on filesystem traversal order.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

# Round-trip bound for 8-bit quantisation: half of one code step.
QUANT_TOL = 1.0 / 510.0

BT709_WEIGHTS = (0.2126, 0.7152, 0.0722)

KIND_DIRECT = "direct"
KIND_REFLECTION = "reflection"
INSTANCE_KINDS = (KIND_DIRECT, KIND_REFLECTION)

TIMES_OF_DAY = ("day", "night")
VEHICLE_KINDS = ("oncoming", "leading")


def gray_image(data, copy: bool = True) -> np.ndarray:
    """Validate and freeze a 2-D intensity raster in [0, 1].

    Returns a read-only float64 array.  Raises ValidationError on bad shape
    or out-of-range values.
    """
    arr = np.array(data, dtype=np.float64, copy=copy)
    if arr.ndim != 2:
        raise ValidationError(f"image must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if h < 1 or w < 1:
        raise ValidationError(f"image dimensions must be >= 1, got {w}x{h}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"intensities outside [0, 1]: min {arr.min():.6g}, max {arr.max():.6g}"
        )
    arr.flags.writeable = False
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"image shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------

def quantize_u8(img: np.ndarray) -> np.ndarray:
    """[0,1] float -> uint8 with round-half-up (bit-exact across platforms)."""
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_gray_png(img8: np.ndarray) -> bytes:
    """Minimal deterministic PNG encoder for 8-bit grayscale rasters."""
    if img8.dtype != np.uint8 or img8.ndim != 2:
        raise ValidationError("encode_gray_png expects a 2-D uint8 array")
    h, w = img8.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + row.tobytes() for row in img8)
    idat = zlib.compress(raw, 6)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", idat)
        + _png_chunk(b"IEND", b"")
    )


def save_image(img: np.ndarray, path) -> None:
    """Write an image as 8-bit grayscale PNG.

    Round-trip error after load_image is at most 1/510 per pixel.  Parent
    directories are created as needed.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValidationError(f"cannot save image of shape {img.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_gray_png(quantize_u8(img)))


def load_image(path) -> np.ndarray:
    """Load a raster image as a read-only float64 array in [0, 1].

    8-bit value v maps to v/255 exactly; 16-bit to v/65535.  RGB collapses
    to luminance with BT.709 weights.  Anything else is rejected.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            elif mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode == "RGB":
                rgb = np.asarray(im, dtype=np.float64) / 255.0
                r, g, b = BT709_WEIGHTS
                arr = rgb[..., 0] * r + rgb[..., 1] * g + rgb[..., 2] * b
            else:
                raise ValidationError(f"unsupported image mode {mode!r} in {path}")
    except ValidationError:
        raise
    except Exception as exc:
        raise ValidationError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0 or min(arr.shape) < 1:
        raise ValidationError(f"zero-dimension image: {path}")
    return gray_image(np.clip(arr, 0.0, 1.0), copy=False)


# ---------------------------------------------------------------------------
# Annotation / dataset model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceAnnotation:
    """A single annotated light instance: a direct source or a reflection.

    bbox is (x, y, w, h) in pixels (sub-pixel extents allowed), keypoint is
    the (x, y) light centre and must lie inside the bbox.
    """

    kind: str
    bbox: tuple
    keypoint: tuple

    def validate(self, width: int, height: int, where: str = "") -> None:
        if self.kind not in INSTANCE_KINDS:
            raise ValidationError(f"{where}: unknown instance kind {self.kind!r}")
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValidationError(f"{where}: bbox has non-positive extent {self.bbox}")
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise ValidationError(
                f"{where}: bbox {self.bbox} outside image bounds {width}x{height}"
            )
        kx, ky = self.keypoint
        if not (x <= kx <= x + w and y <= ky <= y + h):
            raise ValidationError(
                f"{where}: keypoint {self.keypoint} outside bbox {self.bbox}"
            )


@dataclass(frozen=True)
class VehicleRecord:
    vehicle_id: int
    instances: tuple  # of InstanceAnnotation


@dataclass(frozen=True)
class FrameRecord:
    frame_index: int
    image_path: str  # relative to the scene directory
    vehicles: tuple  # of VehicleRecord


@dataclass(frozen=True)
class Scene:
    """Ordered frames sharing one image size, plus toolkit extensions.

    vehicle_kind ("oncoming"/"leading") and markers (first_reflection_frame /
    first_direct_frame) are optional additive keys used by classification
    supervision and early-warning evaluation.
    """

    scene_id: str
    time_of_day: str
    frames: tuple  # of FrameRecord
    width: int = 0
    height: int = 0
    vehicle_kind: str = "oncoming"
    markers: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.time_of_day not in TIMES_OF_DAY:
            raise ValidationError(
                f"scene {self.scene_id}: bad time_of_day {self.time_of_day!r}"
            )
        if self.vehicle_kind not in VEHICLE_KINDS:
            raise ValidationError(
                f"scene {self.scene_id}: bad vehicle_kind {self.vehicle_kind!r}"
            )
        if not self.frames:
            raise ValidationError(f"scene {self.scene_id}: no frames")
        prev = -1
        for fr in self.frames:
            if fr.frame_index <= prev:
                raise ValidationError(
                    f"scene {self.scene_id}: frame_index {fr.frame_index} "
                    f"not strictly increasing after {prev}"
                )
            prev = fr.frame_index
            seen_ids = set()
            for veh in fr.vehicles:
                if veh.vehicle_id in seen_ids:
                    raise ValidationError(
                        f"scene {self.scene_id} frame {fr.frame_index}: "
                        f"duplicate vehicle id {veh.vehicle_id}"
                    )
                seen_ids.add(veh.vehicle_id)
                for inst in veh.instances:
                    inst.validate(
                        self.width,
                        self.height,
                        where=f"scene {self.scene_id} frame {fr.frame_index}",
                    )
        if self.markers:
            fr0 = self.markers.get("first_reflection_frame")
            fd0 = self.markers.get("first_direct_frame")
            if fr0 is not None and fd0 is not None and fr0 > fd0:
                raise ValidationError(
                    f"scene {self.scene_id}: first_reflection_frame {fr0} "
                    f"after first_direct_frame {fd0}"
                )


@dataclass(frozen=True)
class SummaryCounts:
    scenes: int = 0
    images: int = 0
    vehicle_positions: int = 0
    instances: int = 0


@dataclass(frozen=True)
class Dataset:
    root: Path
    scenes: tuple  # of Scene
    summary: dict  # time_of_day -> SummaryCounts

    def scene(self, scene_id: str) -> Scene:
        for sc in self.scenes:
            if sc.scene_id == scene_id:
                return sc
        raise KeyError(scene_id)


def summarize_scenes(scenes) -> dict:
    """Recompute summary counts; a pure function of the scene records."""
    out = {}
    for sc in scenes:
        cur = out.get(sc.time_of_day, SummaryCounts())
        images = len(sc.frames)
        positions = sum(len(fr.vehicles) for fr in sc.frames)
        instances = sum(
            len(veh.instances) for fr in sc.frames for veh in fr.vehicles
        )
        out[sc.time_of_day] = SummaryCounts(
            scenes=cur.scenes + 1,
            images=cur.images + images,
            vehicle_positions=cur.vehicle_positions + positions,
            instances=cur.instances + instances,
        )
    return out


# --- JSON schema -----------------------------------------------------------

def scene_to_json(scene: Scene) -> dict:
    doc = {
        "scene_id": scene.scene_id,
        "time_of_day": scene.time_of_day,
        "frames": [
            {
                "frame_index": fr.frame_index,
                "image": fr.image_path,
                "vehicles": [
                    {
                        "id": veh.vehicle_id,
                        "instances": [
                            {
                                "kind": inst.kind,
                                "bbox": list(inst.bbox),
                                "keypoint": list(inst.keypoint),
                            }
                            for inst in veh.instances
                        ],
                    }
                    for veh in fr.vehicles
                ],
            }
            for fr in scene.frames
        ],
    }
    if scene.vehicle_kind != "oncoming":
        doc["vehicle_kind"] = scene.vehicle_kind
    if scene.markers:
        doc["markers"] = dict(scene.markers)
    return doc


def scene_from_json(doc: dict, width: int = 0, height: int = 0) -> Scene:
    try:
        frames = tuple(
            FrameRecord(
                frame_index=int(fr["frame_index"]),
                image_path=str(fr["image"]),
                vehicles=tuple(
                    VehicleRecord(
                        vehicle_id=int(veh["id"]),
                        instances=tuple(
                            InstanceAnnotation(
                                kind=str(inst["kind"]),
                                bbox=tuple(float(v) for v in inst["bbox"]),
                                keypoint=tuple(float(v) for v in inst["keypoint"]),
                            )
                            for inst in veh["instances"]
                        ),
                    )
                    for veh in fr["vehicles"]
                ),
            )
            for fr in doc["frames"]
        )
        return Scene(
            scene_id=str(doc["scene_id"]),
            time_of_day=str(doc["time_of_day"]),
            frames=frames,
            width=width,
            height=height,
            vehicle_kind=str(doc.get("vehicle_kind", "oncoming")),
            markers=dict(doc.get("markers", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed annotation document: {exc}") from exc


def dump_json(doc, path) -> None:
    """Deterministic JSON emission: sorted keys, fixed indentation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_scene(scene: Scene, images: dict, root) -> Path:
    """Write a scene directory (images + annotations.json) under root/scenes/.

    images maps frame_index -> 2-D array.  Returns the scene directory.
    """
    scene_dir = Path(root) / "scenes" / scene.scene_id
    for fr in scene.frames:
        save_image(images[fr.frame_index], scene_dir / fr.image_path)
    dump_json(scene_to_json(scene), scene_dir / "annotations.json")
    return scene_dir


def load_dataset(root) -> Dataset:
    """Load and validate a dataset from the documented on-disk layout."""
    root = Path(root)
    scenes_dir = root / "scenes"
    if not scenes_dir.is_dir():
        raise ValidationError(f"dataset root {root} has no scenes/ directory")
    scenes = []
    for scene_dir in sorted(p for p in scenes_dir.iterdir() if p.is_dir()):
        ann_path = scene_dir / "annotations.json"
        if not ann_path.exists():
            raise ValidationError(f"scene {scene_dir.name}: missing annotations.json")
        try:
            doc = json.loads(ann_path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"scene {scene_dir.name}: invalid JSON in annotations.json: {exc}"
            ) from exc
        scene = scene_from_json(doc)
        if scene.scene_id != scene_dir.name:
            raise ValidationError(
                f"scene {scene_dir.name}: annotations declare scene_id "
                f"{scene.scene_id!r}"
            )
        width = height = None
        for fr in scene.frames:
            img_path = scene_dir / fr.image_path
            if not img_path.exists():
                raise ValidationError(
                    f"scene {scene.scene_id} frame {fr.frame_index}: "
                    f"missing image {fr.image_path}"
                )
            with Image.open(img_path) as im:
                if (width, height) == (None, None):
                    width, height = im.size
                elif (width, height) != im.size:
                    raise ValidationError(
                        f"scene {scene.scene_id}: image sizes differ "
                        f"({width}x{height} vs {im.size[0]}x{im.size[1]})"
                    )
        scene = Scene(
            scene_id=scene.scene_id,
            time_of_day=scene.time_of_day,
            frames=scene.frames,
            width=width,
            height=height,
            vehicle_kind=scene.vehicle_kind,
            markers=scene.markers,
        )
        scene.validate()
        scenes.append(scene)
    if not scenes:
        raise ValidationError(f"dataset root {root} contains no scenes")
    scenes = tuple(scenes)
    return Dataset(root=root, scenes=scenes, summary=summarize_scenes(scenes))
