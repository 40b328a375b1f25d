"""
Negative sampling for ranking losses and evaluation.
"""

from typing import Collection

import numpy as np

from core.exceptions import SamplingError

# above this interacted share, sample from the explicit complement
_COMPLEMENT_SHARE = 0.5


def _eligible(interacted: Collection[int], n_items: int) -> np.ndarray:
    return np.setdiff1d(np.arange(n_items), np.fromiter(interacted, dtype=np.int64, count=len(interacted)))


def sample_negative_item(interacted: Collection[int], n_items: int, rng: np.random.Generator) -> int:
    """Uniform draw over items outside ``interacted``"""
    if len(interacted) >= _COMPLEMENT_SHARE * n_items:
        eligible = _eligible(interacted, n_items)
        if len(eligible) == 0:
            raise SamplingError(f"user interacted with all {n_items} items; no negative to sample")
        return int(eligible[rng.integers(len(eligible))])
    while True:
        item = int(rng.integers(n_items))
        if item not in interacted:
            return item


def sample_negative_items(interacted: Collection[int], n_items: int, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """``n`` distinct negatives, uniform without replacement"""
    eligible = _eligible(interacted, n_items)
    if len(eligible) < n:
        raise SamplingError(f"only {len(eligible)} eligible negatives, {n} requested")
    return rng.choice(eligible, size=n, replace=False)


def sample_negative_behavior(positive: int, n_behaviors: int, rng: np.random.Generator) -> int:
    """Uniform over behaviors other than ``positive``"""
    if n_behaviors < 2:
        raise SamplingError("negative behavior needs at least two behaviors")
    draw = int(rng.integers(n_behaviors - 1))
    return draw + 1 if draw >= positive else draw
