"""
Checkpoint container shared by networks, flows and training sets.

Format (version 1), a single JSON object::

    {
      "format": "committor-checkpoint",
      "version": 1,
      "kind": "<committor-net | autoencoder | flow | training-set | ...>",
      "meta": {...},                       # free-form JSON metadata
      "tensors": {
        "<name>": {"shape": [..], "dtype": "float64", "data": [..]}
      }
    }

``data`` is the row-major flattening; floats are written with ``repr`` so
that a save/load cycle is exact.
"""

from __future__ import annotations

# Core Imports
import json
import os
import tempfile
from typing import Any, Dict, Mapping, Tuple

# Third Party Imports
import torch

# Local Imports
from .types import CheckpointPayload, TensorPayload

FORMAT = "committor-checkpoint"
VERSION = 1


def _encode(tensor: torch.Tensor) -> TensorPayload:
    t = tensor.detach().cpu().contiguous()
    if t.dtype.is_floating_point:
        t = t.to(torch.float64)
        dtype = "float64"
    else:
        t = t.to(torch.int64)
        dtype = "int64"
    return {"shape": list(t.shape), "dtype": dtype, "data": t.reshape(-1).tolist()}


def _decode(payload: TensorPayload) -> torch.Tensor:
    dtype = torch.float64 if payload["dtype"] == "float64" else torch.int64
    return torch.tensor(payload["data"], dtype=dtype).reshape(payload["shape"])


def write_json_atomic(path: str, payload: Any) -> None:
    """Write JSON next to ``path`` and move it into place in one step"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def save(
    path: str,
    kind: str,
    tensors: Mapping[str, torch.Tensor],
    meta: Mapping[str, Any] | None = None,
) -> None:
    payload: CheckpointPayload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "meta": dict(meta or {}),
        "tensors": {name: _encode(t) for name, t in tensors.items()},
    }
    write_json_atomic(path, payload)


def load(path: str, kind: str) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    with open(path) as f:
        payload: CheckpointPayload = json.load(f)
    if payload.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    if payload["version"] != VERSION:
        raise ValueError(f"Unsupported checkpoint version {payload['version']}")
    if payload["kind"] != kind:
        raise ValueError(f"Expected a '{kind}' checkpoint, found '{payload['kind']}'")
    tensors = {name: _decode(t) for name, t in payload["tensors"].items()}
    return tensors, dict(payload["meta"])


def save_module(
    path: str, kind: str, module: torch.nn.Module, meta: Mapping[str, Any]
) -> None:
    save(path, kind, module.state_dict(), meta)


def load_module(path: str, kind: str, module: torch.nn.Module) -> Dict[str, Any]:
    """Load named tensors into an already-constructed module and return its meta"""
    tensors, meta = load(path, kind)
    module.load_state_dict(tensors)
    return meta
