"""Versioned binary checkpoints.

Layout, all integers little-endian::

    offset  size  content
    0       8     magic b"GPGRLCKP"
    8       4     format version (uint32, currently 1)
    12      4     header length H (uint32)
    16      H     UTF-8 JSON header
    16+H    ...   float64 little-endian arrays, concatenated in the order
                  listed by header["arrays"] as [name, length] pairs

The JSON header carries the policy architecture (``policy``), the value net
architecture or null (``value``), the environment id, the iteration count and
the resolved training config.  Arrays are ``theta``, optionally ``phi``, and
the optimizer moments ``adam_m``/``adam_v`` with ``header["adam_step"]``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .policy import ValueNet, policy_from_metadata

MAGIC = b"GPGRLCKP"
VERSION = 1


def save_checkpoint(path, policy, valuenet=None, optimizer=None, env_id="",
                    iteration=0, config=None):
    arrays = {"theta": policy.theta}
    if valuenet is not None:
        arrays["phi"] = valuenet.theta
    header = {
        "policy": policy.metadata(),
        "value": valuenet.metadata() if valuenet is not None else None,
        "env_id": env_id,
        "iteration": int(iteration),
        "config": config or {},
        "adam_step": 0,
    }
    if optimizer is not None:
        arrays["adam_m"] = optimizer.m
        arrays["adam_v"] = optimizer.v
        header["adam_step"] = int(optimizer.t)
    header["arrays"] = [[k, int(np.size(v))] for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    Path(path).write_bytes(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + body)


def load_checkpoint(path):
    """Read a checkpoint; returns a dict with ``policy``, ``value``, ``header`` and raw arrays."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}, expected {MAGIC!r}")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    arrays, off = {}, 16 + hlen
    for name, n in header["arrays"]:
        chunk = data[off:off + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64)
        off += 8 * n
    try:
        policy = policy_from_metadata(header["policy"], arrays["theta"])
        value = None
        if header.get("value"):
            v = header["value"]
            value = ValueNet(v["obs_kind"], v["obs_size"], v["hidden"], theta=arrays["phi"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent contents ({exc})") from exc
    return {"policy": policy, "value": value, "header": header, "arrays": arrays}


def check_compatible(policy, spec):
    """Raise :class:`CheckpointError` unless ``policy`` fits environment ``spec``."""
    meta = policy.metadata()
    expected = {"obs_kind": spec.observation_kind, "obs_size": spec.observation_size,
                "action_size": spec.action_size}
    found = {k: meta[k] for k in expected}
    head_ok = (meta["head"] == "gaussian") == (spec.action_kind == "box")
    if found != expected or not head_ok:
        raise CheckpointError(f"checkpoint does not fit env {spec.env_id!r}: expected "
                              f"{expected} with {spec.action_kind} actions, found {found} "
                              f"with {meta['head']} head")
