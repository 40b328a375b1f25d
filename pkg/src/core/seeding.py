"""
Named random substreams derived from one master seed.
"""

import hashlib
import json
from typing import Any, Dict

import numpy as np
import torch


def stable_hash(value: Any) -> str:
    """SHA-256 hex digest of a canonical JSON serialization"""
    payload = json.dumps(value, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _name_key(name: str) -> int:
    return int(hashlib.sha256(name.encode("utf-8")).hexdigest()[:8], 16)


class SeedStreams:
    """Derives independent, reproducible generators for named stages"""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def sequence(self, name: str, *extra: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, _name_key(name), *map(int, extra)])

    def numpy(self, name: str, *extra: int) -> np.random.Generator:
        return np.random.default_rng(self.sequence(name, *extra))

    def torch_seed(self, name: str) -> int:
        return int(self.sequence(name).generate_state(1, dtype=np.uint32)[0])

    def torch(self, name: str) -> torch.Generator:
        generator = torch.Generator()
        generator.manual_seed(self.torch_seed(name))
        return generator

    def to_dict(self) -> Dict[str, int]:
        return {"master_seed": self.master_seed}
