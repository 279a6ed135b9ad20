"""Checkpoint files: a JSON manifest followed by a flat float32 payload.

Layout (all integers little-endian)::

    8 bytes   magic  b"AAPCKPT\\n"
    8 bytes   uint64 manifest length L
    L bytes   manifest, UTF-8 JSON with sorted keys and no whitespace
    rest      payload, concatenated little-endian float32 arrays

The manifest holds ``format_version``, ``config_hash``, ``step``, ``config``
(the resolved run config), ``arrays`` (name -> {"shape", "offset"} with the
offset counted in float32 elements) and ``extra`` (JSON trainer state such as
random-generator states).  Arrays are written in sorted name order, so
save -> load -> save reproduces the same bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"AAPCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_hash: str
    step: int
    arrays: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        """Policy parameters (arrays under the ``param/`` prefix)."""
        return {k[len("param/"):]: v for k, v in self.arrays.items() if k.startswith("param/")}


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def to_bytes(ckpt: Checkpoint) -> bytes:
    index, chunks, offset = {}, [], 0
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f4")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": ckpt.config_hash,
        "step": int(ckpt.step),
        "config": ckpt.config,
        "arrays": index,
        "payload_floats": offset,
        "extra": ckpt.extra,
    }
    head = _dumps(manifest)
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def from_bytes(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
    payload = np.frombuffer(data[16 + n:], dtype="<f4")
    if payload.size != manifest["payload_floats"]:
        raise CheckpointError(f"payload has {payload.size} floats, manifest says "
                              f"{manifest['payload_floats']}")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        size = int(np.prod(entry["shape"], dtype=np.int64))
        lo = entry["offset"]
        arrays[name] = payload[lo:lo + size].reshape(entry["shape"]).astype(np.float32)
    return Checkpoint(manifest["config_hash"], manifest["step"], arrays,
                      manifest.get("config", {}), manifest.get("extra", {}))


def save(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def describe(ckpt: Checkpoint) -> dict:
    """Summary used by ``inspect-checkpoint``."""
    params = ckpt.params()
    return {
        "format_version": FORMAT_VERSION,
        "config_hash": ckpt.config_hash,
        "step": ckpt.step,
        "task": ckpt.config.get("run", {}).get("task"),
        "variant": ckpt.config.get("run", {}).get("variant"),
        "n_arrays": len(ckpt.arrays),
        "n_parameters": int(sum(v.size for v in params.values())),
        "parameters": {k: list(v.shape) for k, v in sorted(params.items())},
    }
