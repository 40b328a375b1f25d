"""
User behavior statistics used as prompt information.
"""

from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .records import InteractionRecord, UserStatistics

RATIO_SENTINEL = 0.0


def compute_user_statistics(records: Iterable[Union[InteractionRecord, int]], n_behaviors: int) -> UserStatistics:
    """Counts per behavior and conversion ratios count(b2)/count(b1)"""
    behaviors = [r.behavior if isinstance(r, InteractionRecord) else int(r) for r in records]
    counts = np.bincount(np.asarray(behaviors, dtype=np.int64), minlength=n_behaviors)[:n_behaviors]
    ratios = {}
    for source in range(n_behaviors):
        for target in range(n_behaviors):
            if source == target:
                continue
            ratios[(source, target)] = (
                float(counts[target]) / float(counts[source]) if counts[source] > 0 else RATIO_SENTINEL
            )
    return UserStatistics(
        counts_per_behavior=[int(c) for c in counts],
        conversion_ratios=ratios,
        total_length=len(behaviors),
    )


def fit_standardizer(vectors: np.ndarray, std_floor: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Column mean and floored std over the tuning corpus"""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape[0] == 0:
        width = vectors.shape[1]
        return np.zeros(width), np.ones(width)
    return vectors.mean(axis=0), np.maximum(vectors.std(axis=0), std_floor)


def statistics_matrix(sequences: Sequence[np.ndarray], n_behaviors: int) -> np.ndarray:
    """Stack statistics vectors for behavior-id sequences"""
    width = UserStatistics.vector_size(n_behaviors)
    if not len(sequences):
        return np.zeros((0, width))
    return np.stack([compute_user_statistics(s, n_behaviors).to_vector() for s in sequences])
