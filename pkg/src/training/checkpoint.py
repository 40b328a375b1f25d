"""
Versioned checkpoint files for the backbone and for tuned prompt parameters.

A checkpoint is a ``torch.save`` dictionary with a self-describing header
(dimensions, layer count, k, |B|) and the fingerprint of the configuration
that produced it.
"""

import json
import pickle
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch
from loguru import logger

from core.exceptions import CheckpointCorruptError, CheckpointIncompatibleError

CHECKPOINT_VERSION = 1
BACKBONE_KIND = "backbone"
PROMPTS_KIND = "prompts"


@dataclass
class Checkpoint:
    kind: str
    header: Dict[str, Any]
    fingerprint: str
    state: Dict[str, torch.Tensor]
    optimizer_state: Optional[Dict[str, Any]] = None
    epoch: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)
    metric: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def capture_rng_state(rng: Optional[np.random.Generator] = None) -> Dict[str, Any]:
    state = {"torch": torch.get_rng_state()}
    if rng is not None:
        state["numpy"] = json.dumps(rng.bit_generator.state)
    return state


def restore_rng(state: Dict[str, Any]) -> Optional[np.random.Generator]:
    if "torch" in state:
        torch.set_rng_state(state["torch"])
    if "numpy" not in state:
        return None
    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(state["numpy"])
    return rng


def save_checkpoint(path: str, checkpoint: Checkpoint) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": checkpoint.kind,
        "header": checkpoint.header,
        "fingerprint": checkpoint.fingerprint,
        "state": {name: tensor.detach().clone() for name, tensor in checkpoint.state.items()},
        "optimizer_state": checkpoint.optimizer_state,
        "epoch": checkpoint.epoch,
        "rng_state": checkpoint.rng_state,
        "metric": checkpoint.metric,
        "extra": checkpoint.extra,
    }
    torch.save(payload, path)
    logger.info(f"Saved {checkpoint.kind} checkpoint to {path} (epoch {checkpoint.epoch})")
    return str(path)


def _read(path: str) -> Dict[str, Any]:
    if not Path(path).exists():
        raise FileNotFoundError(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile, ValueError) as e:
        raise CheckpointCorruptError(f"cannot decode checkpoint {path}: {e}", path=str(path))
    required = {"version", "kind", "header", "fingerprint", "state"}
    if not isinstance(payload, dict) or not required <= set(payload):
        raise CheckpointCorruptError(f"checkpoint {path} is missing required fields", path=str(path))
    return payload


def header_mismatch(saved: Dict[str, Any], expected: Dict[str, Any]) -> List[str]:
    return sorted(key for key in expected if saved.get(key) != expected[key])


def load_checkpoint(path: str, expected_header: Optional[Dict[str, Any]] = None,
                    expected_fingerprint: Optional[str] = None,
                    kind: str = BACKBONE_KIND) -> Checkpoint:
    """Read and validate a checkpoint; mismatching fields are named in the error"""
    payload = _read(path)
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointIncompatibleError(
            ["version"], f"checkpoint version {payload['version']} != supported {CHECKPOINT_VERSION}")
    if payload["kind"] != kind:
        raise CheckpointIncompatibleError(["kind"], f"expected a {kind} checkpoint, found {payload['kind']}")
    fields = header_mismatch(payload["header"], expected_header or {})
    if expected_fingerprint is not None and payload["fingerprint"] != expected_fingerprint:
        fields.append("fingerprint")
    if fields:
        raise CheckpointIncompatibleError(fields)
    return Checkpoint(
        kind=payload["kind"],
        header=payload["header"],
        fingerprint=payload["fingerprint"],
        state=payload["state"],
        optimizer_state=payload.get("optimizer_state"),
        epoch=payload.get("epoch", 0),
        rng_state=payload.get("rng_state", {}),
        metric=payload.get("metric"),
        extra=payload.get("extra", {}),
    )
