"""Checkpoint directories: ``manifest.json`` plus one binary file per named tensor.

Tensor file layout (little-endian): magic ``b"UTNS"``, uint32 ndim, ndim x uint32
extents, then float32 values in C order.
"""
from __future__ import annotations

import hashlib
import json
import shutil
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
MAGIC = b"UTNS"


class CheckpointError(RuntimeError):
    pass


def write_tensor(path: Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a tensor file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    offset = 8 + 4 * ndim
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != offset + 4 * count:
        raise CheckpointError(f"{path}: truncated tensor data")
    return np.frombuffer(raw, dtype="<f4", offset=offset, count=count).reshape(shape).astype(np.float32)


def _safe(name: str) -> str:
    return name.replace("/", "_")


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(
    directory: str | Path,
    tensors: dict[str, np.ndarray],
    manifest: dict,
    extra_files: dict[str, str] | None = None,
) -> Path:
    """Write atomically: build in a sibling temp dir, then swap into place."""
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "tensors").mkdir(parents=True)
    entries = []
    for name, arr in tensors.items():
        fname = f"{_safe(name)}.bin"
        write_tensor(tmp / "tensors" / fname, arr)
        entries.append({"name": name, "file": fname, "shape": list(np.shape(arr))})
    body = dict(manifest, format_version=FORMAT_VERSION, tensors=entries)
    (tmp / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for fname, text in (extra_files or {}).items():
        (tmp / fname).write_text(text, encoding="utf-8")
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)
    return directory


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest in {directory}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    tensors = {}
    for entry in manifest["tensors"]:
        try:
            arr = read_tensor(directory / "tensors" / entry["file"])
        except OSError as exc:
            raise CheckpointError(str(exc)) from exc
        if list(arr.shape) != entry["shape"]:
            raise CheckpointError(f"{entry['name']}: shape {arr.shape} != manifest {entry['shape']}")
        tensors[entry["name"]] = arr
    return tensors, manifest
