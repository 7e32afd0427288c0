"""Checkpoint persistence.

A checkpoint directory holds manifest.json plus weights.bin.  The manifest
records the format version, architecture, the canonical tensor order with
shapes and byte offsets (parameters first, then Adam moments), trainer state,
and provenance (config hash, seed).  weights.bin is the little-endian
float32 tensors concatenated row-major in manifest order, so a load
reproduces forward outputs bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..imgcore import dump_json
from .net import Network, NetworkArch

FORMAT_VERSION = 1


@dataclass
class TrainerState:
    step: int = 0
    stage_index: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


@dataclass
class Checkpoint:
    network: Network
    trainer: TrainerState = field(default_factory=TrainerState)
    config_hash: str = ""
    seed: int = 0


def save_checkpoint(ckpt: Checkpoint, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors = []
    for name, arr in ckpt.network.params.items():
        tensors.append(("param", name, arr))
    for name, arr in ckpt.trainer.adam_m.items():
        tensors.append(("adam_m", name, arr))
    for name, arr in ckpt.trainer.adam_v.items():
        tensors.append(("adam_v", name, arr))
    blob = bytearray()
    records = []
    for kind, name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        records.append(
            {"kind": kind, "name": name, "shape": list(arr.shape), "offset": len(blob)}
        )
        blob.extend(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch": {
            "depth": ckpt.network.arch.depth,
            "channels": list(ckpt.network.arch.channels),
            "kernel": ckpt.network.arch.kernel,
            "activation": ckpt.network.arch.activation,
        },
        "tensors": records,
        "trainer": {"step": ckpt.trainer.step, "stage_index": ckpt.trainer.stage_index},
        "provenance": {"config_hash": ckpt.config_hash, "seed": ckpt.seed},
        "total_bytes": len(blob),
    }
    dump_json(manifest, out_dir / "manifest.json")
    (out_dir / "weights.bin").write_bytes(bytes(blob))
    return out_dir


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    man_path = path / "manifest.json"
    bin_path = path / "weights.bin"
    if not man_path.exists() or not bin_path.exists():
        raise CheckpointError(f"checkpoint at {path} is missing manifest or weights")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format_version {manifest.get('format_version')} "
            f"!= supported {FORMAT_VERSION}"
        )
    blob = bin_path.read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(
            f"weights.bin is {len(blob)} bytes, manifest declares "
            f"{manifest['total_bytes']} (truncated or corrupt)"
        )
    arch = NetworkArch(
        depth=int(manifest["arch"]["depth"]),
        channels=tuple(manifest["arch"]["channels"]),
        kernel=int(manifest["arch"]["kernel"]),
        activation=str(manifest["arch"]["activation"]),
    )
    params, adam_m, adam_v = {}, {}, {}
    buckets = {"param": params, "adam_m": adam_m, "adam_v": adam_v}
    for rec in manifest["tensors"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = rec["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"tensor {rec['name']} overruns weights.bin")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
        try:
            buckets[rec["kind"]][rec["name"]] = arr
        except KeyError as exc:
            raise CheckpointError(f"unknown tensor kind {rec['kind']!r}") from exc
    net = Network(arch=arch, params=params, dtype=np.dtype(np.float32))
    expected = {name for name, _, _ in _expected_tensors(arch)}
    if set(params) != expected:
        raise CheckpointError(
            "checkpoint parameters do not match the declared architecture"
        )
    trainer = TrainerState(
        step=int(manifest["trainer"]["step"]),
        stage_index=int(manifest["trainer"]["stage_index"]),
        adam_m=adam_m,
        adam_v=adam_v,
    )
    return Checkpoint(
        network=net,
        trainer=trainer,
        config_hash=str(manifest["provenance"]["config_hash"]),
        seed=int(manifest["provenance"]["seed"]),
    )


def _expected_tensors(arch: NetworkArch):
    from .net import block_table

    for name, cin, cout in block_table(arch):
        yield f"{name}.dw", (3, 3, cin), None
        yield f"{name}.pw", (cin, cout), None
        yield f"{name}.b", (cout,), None
    c0 = arch.channels[0]
    yield "head_image.pw", (c0, 1), None
    yield "head_image.b", (1,), None
    yield "head_mask.pw", (c0, 1), None
    yield "head_mask.b", (1,), None
