"""
Ranking metrics for a single relevant item among sampled candidates.
"""

import math
from typing import List, Sequence, Tuple

import numpy as np
import torch


def rank_order(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Indices sorting candidates by descending score, ties by ascending item id"""
    return np.lexsort((np.asarray(candidates), -np.asarray(scores, dtype=np.float64)))


def rank_candidates(u: torch.Tensor, candidates: Sequence[int], item_table: torch.Tensor) -> List[int]:
    """Candidate ids ordered by u·e_v"""
    ids = np.asarray(candidates, dtype=np.int64)
    with torch.no_grad():
        scores = (item_table[torch.as_tensor(ids)] @ u).double().cpu().numpy()
    return ids[rank_order(scores, ids)].tolist()


def target_rank(scores: np.ndarray, candidates: np.ndarray, target: int) -> int:
    """1-based rank of ``target`` under the same ordering as ``rank_order``"""
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.asarray(candidates)
    own = scores[candidates == target][0]
    ahead = (scores > own) | ((scores == own) & (candidates < target))
    return int(ahead.sum()) + 1


def target_ranks(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Row-wise rank of column 0 (the relevant item) in (n, m) score/candidate arrays"""
    scores = np.asarray(scores, dtype=np.float64)
    own = scores[:, :1]
    ahead = (scores > own) | ((scores == own) & (candidates < candidates[:, :1]))
    return ahead.sum(axis=1) + 1


def pad_candidate_rows(rows: Sequence[np.ndarray]) -> np.ndarray:
    """Stack ``[target, negatives...]`` rows of unequal length into one (n, m) array.

    Short rows are filled with their own target. A copy of the target never
    ranks ahead of it, so each row keeps the rank it would have on its own.
    """
    if not len(rows):
        return np.zeros((0, 1), dtype=np.int64)
    width = max(len(row) for row in rows)
    out = np.empty((len(rows), width), dtype=np.int64)
    for index, row in enumerate(rows):
        out[index, :len(row)] = row
        out[index, len(row):] = row[0]
    return out


def hr_ndcg_at_k(rank: int, k: int) -> Tuple[float, float]:
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > k:
        return 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank + 1)


def mean_metrics(ranks: Sequence[int], ks: Sequence[int]) -> dict:
    """{"HR@k": ..., "NDCG@k": ...} averaged over ranks"""
    out = {}
    for k in ks:
        pairs = [hr_ndcg_at_k(int(r), k) for r in ranks]
        out[f"HR@{k}"] = float(np.mean([p[0] for p in pairs])) if pairs else 0.0
        out[f"NDCG@{k}"] = float(np.mean([p[1] for p in pairs])) if pairs else 0.0
    return out
