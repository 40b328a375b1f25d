"""
Filtering and splitting protocol: k-core filtering, temporal pretrain/finetune
split and leave-one-out positions on the target behavior.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .records import InteractionLog, SplitSpec, UserSplit, densify, sort_frame


def filter_min_interactions(log: InteractionLog, min_count: int) -> InteractionLog:
    """Drop users and items with fewer than ``min_count`` interactions until a fixed point"""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")

    frame = log.frame
    rounds = 0
    while True:
        rounds += 1
        user_counts = frame.groupby("user")["user"].transform("size")
        item_counts = frame.groupby("item")["item"].transform("size")
        keep = (user_counts >= min_count) & (item_counts >= min_count)
        if keep.all():
            break
        frame = frame[keep]

    dense, id_map = densify(frame)
    if log.id_map is not None:
        id_map = log.id_map.compose(id_map)
    logger.info(f"Filter min_count={min_count} converged after {rounds} rounds: "
                f"{len(log)} -> {len(dense)} interactions, {len(id_map.users)} users, {len(id_map.items)} items")
    return InteractionLog(
        frame=sort_frame(dense),
        n_users=len(id_map.users),
        n_items=len(id_map.items),
        n_behaviors=log.n_behaviors,
        target_behavior=log.target_behavior,
        id_map=id_map,
    )


@dataclass
class SplitReport:
    ratio: float
    granularity: str
    pretrain_records: int = 0
    finetune_records: int = 0
    flagged_users: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "ratio": self.ratio,
            "granularity": self.granularity,
            "pretrain_records": self.pretrain_records,
            "finetune_records": self.finetune_records,
            "flagged_users": list(self.flagged_users),
            "n_flagged_users": len(self.flagged_users),
        }


def _pretrain_count(n: int, ratio: float) -> int:
    # rounding guards products such as 0.7 * 10 = 7.000000000000001
    return min(n, math.ceil(round(ratio * n, 9)))


def temporal_split_with_report(log: InteractionLog, ratio: float, granularity: str = "per_user",
                               min_finetune: int = 2) -> Tuple[InteractionLog, InteractionLog, SplitReport]:
    """Split each user's history in time; users left with fewer than
    ``min_finetune`` finetune records stay entirely in pretrain and are flagged."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if granularity not in ("per_user", "global"):
        raise ValueError(f"unknown split granularity '{granularity}'")

    frame = log.frame
    in_pretrain = np.zeros(len(frame), dtype=bool)
    if granularity == "per_user":
        rank = frame.groupby("user").cumcount().to_numpy()
        size = frame.groupby("user")["user"].transform("size").to_numpy()
        cut = np.array([_pretrain_count(int(n), ratio) for n in size], dtype=np.int64)
        in_pretrain = rank < cut
    elif len(frame):
        order = np.argsort(frame["timestamp"].to_numpy(), kind="mergesort")
        global_rank = np.empty(len(frame), dtype=np.int64)
        global_rank[order] = np.arange(len(frame))
        in_pretrain = global_rank < _pretrain_count(len(frame), ratio)

    report = SplitReport(ratio=ratio, granularity=granularity)
    finetune_sizes = pd.Series(~in_pretrain).groupby(frame["user"].to_numpy()).sum()
    flagged = finetune_sizes[finetune_sizes < min_finetune].index.to_numpy()
    if len(flagged):
        in_pretrain |= frame["user"].isin(flagged).to_numpy()
        report.flagged_users = [int(u) for u in flagged]

    pretrain = log.with_frame(frame[in_pretrain])
    finetune = log.with_frame(frame[~in_pretrain])
    report.pretrain_records, report.finetune_records = len(pretrain), len(finetune)
    logger.info(f"Temporal split ({granularity}, ratio={ratio}): {len(pretrain)} pretrain / "
                f"{len(finetune)} finetune records, {len(report.flagged_users)} users flagged")
    return pretrain, finetune, report


def temporal_split(log: InteractionLog, ratio: float,
                   granularity: str = "per_user") -> Tuple[InteractionLog, InteractionLog]:
    pretrain, finetune, _ = temporal_split_with_report(log, ratio, granularity)
    return pretrain, finetune


def make_split_spec(finetune: InteractionLog, target_behavior: int,
                    pretrain: Optional[InteractionLog] = None) -> SplitSpec:
    """Leave-one-out on the target behavior: last target = test, previous target = valid"""
    if not 0 <= target_behavior < finetune.n_behaviors:
        raise ValueError(f"target behavior {target_behavior} not in [0, {finetune.n_behaviors})")

    users: Dict[int, UserSplit] = {}
    excluded = 0
    for user, sequence in finetune.user_sequences().items():
        target_positions = np.flatnonzero(sequence[:, 2] == target_behavior)
        if len(target_positions) >= 2:
            test, valid = int(target_positions[-1]), int(target_positions[-2])
            train = [p for p in range(test) if p != valid]
            users[user] = UserSplit(train_positions=train, valid_position=valid, test_position=test)
        else:
            excluded += 1
            users[user] = UserSplit(train_positions=list(range(len(sequence))))

    spec = SplitSpec(
        pretrain_log=pretrain,
        finetune_log=finetune,
        users=users,
        target_behavior=target_behavior,
        excluded_users=excluded,
    )
    logger.info(f"Leave-one-out split on behavior {target_behavior}: "
                f"{len(spec.eval_users)} eval users, {excluded} excluded")
    return spec
