"""Checkpoint files: JSON with a format tag, metadata and flat arrays.

Floats survive the JSON round trip exactly (repr-based encoding), so a
save/load cycle is lossless for float64 parameters.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from moda.errors import CheckpointError

FORMAT = "moda-checkpoint"
VERSION = 1


def save_arrays(path, kind: str, arrays: dict[str, np.ndarray],
                meta: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(a.shape), "data": np.asarray(a, dtype=np.float64).ravel().tolist()}
            for name, a in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_arrays(path, kind: str):
    """Returns (arrays, meta); rejects wrong format, version or kind."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {doc.get('version')!r}"
        )
    if doc.get("kind") != kind:
        raise CheckpointError(
            f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}"
        )
    arrays = {}
    for name, entry in doc["arrays"].items():
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return arrays, doc.get("meta", {})


def restore_params(params: list[np.ndarray], names: list[str],
                   arrays: dict[str, np.ndarray], path="checkpoint") -> None:
    """Copy stored arrays into live parameters, validating names and shapes."""
    if set(names) != set(arrays):
        missing = set(names) - set(arrays)
        extra = set(arrays) - set(names)
        raise CheckpointError(
            f"{path}: parameter names do not match (missing={sorted(missing)}, "
            f"unexpected={sorted(extra)})"
        )
    for p, name in zip(params, names):
        stored = arrays[name]
        if stored.shape != p.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: stored {stored.shape}, "
                f"expected {p.shape}"
            )
        p[...] = stored
