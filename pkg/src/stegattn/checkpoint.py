"""Versioned checkpoint persistence with integrity digests.

One format serves every model kind; the digest covers parameters and the
config snapshot so tampered files are rejected at load time and frozen
models can be compared cheaply.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from stegattn.errors import ChecksumError

FORMAT_VERSION = 1

KINDS = (
    "itc",
    "mfd-phase1",
    "mfd-phase2",
    "itc-finetuned",
    "mfd-finetuned",
    "extractor",
)


def _state_dict_digest(state_dict: dict, config: dict | None = None) -> str:
    h = hashlib.sha256()
    for name in sorted(state_dict):
        tensor = state_dict[name]
        h.update(name.encode("utf-8"))
        h.update(str(tensor.dtype).encode("utf-8"))
        h.update(str(tuple(tensor.shape)).encode("utf-8"))
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    if config is not None:
        h.update(json.dumps(config, sort_keys=True).encode("utf-8"))
    return h.hexdigest()


def module_digest(module: torch.nn.Module) -> str:
    """Content digest of a module's parameters and buffers."""
    return _state_dict_digest(module.state_dict())


def save_checkpoint(
    path: str | Path,
    kind: str,
    module: torch.nn.Module,
    config: dict,
    metrics: list[dict] | None = None,
    phase: int | None = None,
) -> str:
    """Write a checkpoint and return its digest."""
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    state_dict = module.state_dict()
    digest = _state_dict_digest(state_dict, config)
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "phase": phase,
        "state_dict": state_dict,
        "config": config,
        "metrics": metrics or [],
        "digest": digest,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return digest


def load_checkpoint(path: str | Path, expected_kind: str | None = None) -> dict:
    """Read and verify a checkpoint; raises ChecksumError on tampering."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload.get('format_version')}")
    digest = _state_dict_digest(payload["state_dict"], payload["config"])
    if digest != payload["digest"]:
        raise ChecksumError(f"checkpoint digest mismatch for {path}")
    if expected_kind is not None and payload["kind"] != expected_kind:
        raise ValueError(
            f"expected a {expected_kind!r} checkpoint, found {payload['kind']!r}"
        )
    return payload
