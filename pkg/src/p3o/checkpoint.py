"""Binary policy checkpoints.

Layout (little-endian)::

    b"P3OCKPT1"
    uint64  length of the JSON header in bytes
    bytes   JSON header: policy descriptor, parameter count, optimizer
            hyper-parameters (or null) and free-form metadata
    float64 policy parameters
    float64 optimizer first moments    (only when an optimizer is stored)
    float64 optimizer second moments   (only when an optimizer is stored)

Files are written to a temporary sibling and renamed into place, so a failed
write never replaces the previous complete checkpoint.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError
from .gradient import OptimizerState
from .policy import Policy, policy_from_descriptor

MAGIC = b"P3OCKPT1"
_OPTIMIZER_FIELDS = ("step", "lr", "method", "beta1", "beta2", "eps", "clip_norm", "schedule", "decay",
                     "n_skipped", "n_clipped")


@dataclass
class Checkpoint:
    policy: Policy
    params: np.ndarray
    optimizer: Optional[OptimizerState] = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, policy: Policy, params, optimizer: Optional[OptimizerState] = None,
                    meta: Optional[dict] = None) -> None:
    params = policy.check_params(params)
    header = {
        "policy": policy.descriptor(),
        "n_params": int(params.size),
        "optimizer": None if optimizer is None else {k: getattr(optimizer, k) for k in _OPTIMIZER_FIELDS},
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    arrays = [params]
    if optimizer is not None:
        arrays += [optimizer.m, optimizer.v]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    (n_header,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n_header].decode())
    body = np.frombuffer(raw[16 + n_header:], dtype="<f8")
    n = int(header["n_params"])
    opt = header["optimizer"]
    expected = n * (3 if opt is not None else 1)
    if body.size != expected:
        raise ConfigError(f"{path}: expected {expected} stored values, found {body.size}")
    policy = policy_from_descriptor(header["policy"])
    params = body[:n].astype(float)
    state = None
    if opt is not None:
        state = OptimizerState(body[n:2 * n].astype(float), body[2 * n:].astype(float), **opt)
    return Checkpoint(policy, policy.check_params(params), state, header.get("meta", {}))
