"""Self-describing checkpoint archives.

A checkpoint is an ``.npz`` file. Every tensor is stored under its dot-path
name as a little-endian float32 array (the npy header records the shape), and
the ``__meta__`` entry holds a JSON record with the config, seed and step.
Discriminator tensors carry a ``disc.`` prefix.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

META_KEY = "__meta__"
RESERVED_PREFIXES = ("disc.",)
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _flatten(modules: dict[str, nn.Module]) -> dict[str, np.ndarray]:
    arrays = {}
    for prefix, module in modules.items():
        for name, t in module.state_dict().items():
            key = f"{prefix}.{name}" if prefix else name
            arrays[key] = t.detach().cpu().to(torch.float32).numpy().astype("<f4")
    return arrays


def save_checkpoint(path, modules: dict[str, nn.Module], meta: dict) -> Path:
    """Write ``modules`` (prefix -> module) and ``meta`` atomically to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = _flatten(modules)
    record = {"format": FORMAT_VERSION, **meta}
    arrays[META_KEY] = np.array(json.dumps(record, sort_keys=True))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        if META_KEY not in z.files:
            raise CheckpointError(f"{path} has no metadata record")
        meta = json.loads(str(z[META_KEY]))
        arrays = {k: z[k] for k in z.files if k != META_KEY}
    return arrays, meta


def load_into(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy archive tensors into ``module``, validating every name and shape."""
    head = f"{prefix}." if prefix else ""
    state = module.state_dict()
    wanted = {head + k for k in state}
    if head:
        present = {k for k in arrays if k.startswith(head)}
    else:
        present = {k for k in arrays if not k.startswith(RESERVED_PREFIXES)}
    missing = sorted(wanted - set(arrays))
    unexpected = sorted(present - wanted)
    if missing or unexpected:
        raise CheckpointError(f"checkpoint/model mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
    with torch.no_grad():
        for name, t in state.items():
            a = arrays[head + name]
            if tuple(a.shape) != tuple(t.shape):
                raise CheckpointError(f"shape mismatch for {head + name}: archive {a.shape} vs model {tuple(t.shape)}")
            t.copy_(torch.from_numpy(np.array(a, copy=True)).to(t.dtype))
