"""Synthetic ground-truth scene generator.

A scripted scene renders Gaussian-profile light blobs over a dark textured
background along linear trajectories, and writes toolkit-format annotations
including the first_reflection_frame / first_direct_frame markers used by
early-warning evaluation.  Rendering is deterministic in (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..imgcore import (
    FrameRecord,
    InstanceAnnotation,
    Scene,
    VehicleRecord,
    write_scene,
)
from ..rng import derive_seed, make_rng


@dataclass(frozen=True)
class LightSpec:
    """One light blob with linearly interpolated trajectory."""

    kind: str                 # "direct" | "reflection"
    vehicle_id: int
    first_frame: int
    last_frame: int
    x: tuple                  # (x at first_frame, x at last_frame)
    y: tuple
    sigma: tuple              # blob radius, px
    peak: tuple               # peak intensity added

    def at(self, frame: int):
        if not self.first_frame <= frame <= self.last_frame:
            return None
        span = max(self.last_frame - self.first_frame, 1)
        t = (frame - self.first_frame) / span
        lerp = lambda ab: ab[0] + (ab[1] - ab[0]) * t
        return lerp(self.x), lerp(self.y), lerp(self.sigma), lerp(self.peak)


@dataclass(frozen=True)
class ScriptedScene:
    scene_id: str
    width: int = 128
    height: int = 96
    n_frames: int = 45
    lights: tuple = ()
    first_reflection_frame: int = 0
    first_direct_frame: int = 0
    vehicle_kind: str = "oncoming"
    background_base: float = 0.06
    texture_amp: float = 0.04
    texture_cells: int = 8

    def validate(self):
        if self.first_reflection_frame > self.first_direct_frame:
            raise ValidationError(
                f"scene {self.scene_id}: first_reflection_frame "
                f"{self.first_reflection_frame} after first_direct_frame "
                f"{self.first_direct_frame}"
            )
        for light in self.lights:
            on_screen = any(
                light.at(f) is not None
                and 0 <= light.at(f)[0] < self.width
                and 0 <= light.at(f)[1] < self.height
                for f in range(self.n_frames)
            )
            if not on_screen:
                raise ValidationError(
                    f"scene {self.scene_id}: light for vehicle "
                    f"{light.vehicle_id} is off frame for its whole life"
                )


def _value_noise(rng, height, width, cells, amp):
    """Smooth texture: a coarse random grid bilinearly upsampled."""
    gh, gw = cells + 1, cells + 1
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    ys = np.linspace(0, cells, height)
    xs = np.linspace(0, cells, width)
    y0 = np.clip(ys.astype(int), 0, cells - 1)
    x0 = np.clip(xs.astype(int), 0, cells - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return amp * ((1 - ty) * ((1 - tx) * g00 + tx * g01) + ty * ((1 - tx) * g10 + tx * g11))


def render_frame(spec: ScriptedScene, frame: int, seed: int) -> np.ndarray:
    rng = make_rng(derive_seed(seed, spec.scene_id, "background"))
    img = spec.background_base + _value_noise(
        rng, spec.height, spec.width, spec.texture_cells, spec.texture_amp
    )
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    for light in spec.lights:
        state = light.at(frame)
        if state is None:
            continue
        cx, cy, sigma, peak = state
        if not (0 <= cx < spec.width and 0 <= cy < spec.height):
            continue
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        img = img + peak * np.exp(-d2 / (2.0 * sigma * sigma))
    return np.clip(img, 0.0, 1.0)


def _annotations_for_frame(spec: ScriptedScene, frame: int):
    by_vehicle = {}
    for light in spec.lights:
        state = light.at(frame)
        if state is None:
            continue
        cx, cy, sigma, _ = state
        if not (0 <= cx < spec.width and 0 <= cy < spec.height):
            continue
        half = 2.5 * sigma
        x0 = max(cx - half, 0.0)
        y0 = max(cy - half, 0.0)
        x1 = min(cx + half, float(spec.width))
        y1 = min(cy + half, float(spec.height))
        inst = InstanceAnnotation(
            kind=light.kind,
            bbox=(x0, y0, x1 - x0, y1 - y0),
            keypoint=(min(max(cx, x0), x1), min(max(cy, y0), y1)),
        )
        by_vehicle.setdefault(light.vehicle_id, []).append(inst)
    return [
        VehicleRecord(vehicle_id=vid, instances=tuple(insts))
        for vid, insts in sorted(by_vehicle.items())
    ]


def script_scene(spec: ScriptedScene, seed: int, out_root) -> Scene:
    """Render a scripted scene to disk; returns the Scene record."""
    spec.validate()
    frames = []
    images = {}
    for f in range(spec.n_frames):
        images[f] = render_frame(spec, f, seed)
        frames.append(
            FrameRecord(
                frame_index=f,
                image_path=f"images/frame_{f:06d}.png",
                vehicles=tuple(_annotations_for_frame(spec, f)),
            )
        )
    scene = Scene(
        scene_id=spec.scene_id,
        time_of_day="night",
        frames=tuple(frames),
        width=spec.width,
        height=spec.height,
        vehicle_kind=spec.vehicle_kind,
        markers={
            "first_reflection_frame": spec.first_reflection_frame,
            "first_direct_frame": spec.first_direct_frame,
        },
    )
    write_scene(scene, images, out_root)
    return scene


def approaching_vehicle_scene(scene_id: str, seed: int, width: int = 128,
                              height: int = 96, n_frames: int = 45,
                              vehicle_kind: str = "oncoming") -> ScriptedScene:
    """A canonical night approach: two road reflections appear first and
    grow, then the direct lamp pair becomes visible and spreads apart.

    Leading vehicles show taillights, rendered dimmer than oncoming
    headlights (the intensity difference is what the grayscale classifier
    can actually learn).
    """
    rng = make_rng(derive_seed(seed, scene_id, "layout"))
    cx = width / 2.0 + float(rng.uniform(-width * 0.1, width * 0.1))
    fr = min(int(rng.integers(3, 7)), max(n_frames // 4, 1))
    fd = min(fr + int(rng.integers(8, 13)), max(2 * n_frames // 3, fr + 1))
    refl_y = height * 0.72
    dir_y = height * 0.55
    gap0 = width * 0.10
    gap1 = width * 0.30
    refl_gap0 = width * 0.08
    refl_gap1 = width * 0.24
    # reflections start faint (distant vehicle) and brighten as it nears;
    # taillights of a leading vehicle are dimmer than oncoming headlights
    if vehicle_kind == "leading":
        dir_peak = (0.55, 0.72)
        refl_peak = (0.24, 0.5)
    else:
        dir_peak = (0.8, 0.95)
        refl_peak = (0.28, 0.72)
    # road reflections fade a few frames after the direct lamps appear (the
    # beam sweeps up off the asphalt as the vehicle closes in)
    refl_last = min(fd + 4, n_frames - 1)
    lights = (
        LightSpec("reflection", 0, fr, refl_last,
                  x=(cx - refl_gap0 / 2, cx - refl_gap1 / 2),
                  y=(refl_y, refl_y + height * 0.06),
                  sigma=(2.2, 3.6), peak=refl_peak),
        LightSpec("reflection", 0, fr, refl_last,
                  x=(cx + refl_gap0 / 2, cx + refl_gap1 / 2),
                  y=(refl_y, refl_y + height * 0.06),
                  sigma=(2.2, 3.6), peak=refl_peak),
        LightSpec("direct", 0, fd, n_frames - 1,
                  x=(cx - gap0 / 2, cx - gap1 / 2),
                  y=(dir_y, dir_y + height * 0.04),
                  sigma=(1.4, 2.6), peak=dir_peak),
        LightSpec("direct", 0, fd, n_frames - 1,
                  x=(cx + gap0 / 2, cx + gap1 / 2),
                  y=(dir_y, dir_y + height * 0.04),
                  sigma=(1.4, 2.6), peak=dir_peak),
    )
    return ScriptedScene(
        scene_id=scene_id, width=width, height=height, n_frames=n_frames,
        lights=lights, first_reflection_frame=fr, first_direct_frame=fd,
        vehicle_kind=vehicle_kind,
    )
