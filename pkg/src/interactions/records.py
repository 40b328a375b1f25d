"""
Interaction log data types.

An InteractionLog wraps a pandas frame with integer columns
(user, item, timestamp, behavior) that is always sorted by
(user, timestamp) with dense ids.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

COLUMNS = ["user", "item", "timestamp", "behavior"]


class InteractionRecord(NamedTuple):
    user_id: int
    item_id: int
    timestamp: int
    behavior: int


def empty_frame() -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype="int64") for c in COLUMNS})


def sort_frame(frame: pd.DataFrame) -> pd.DataFrame:
    """Stable sort by (user, timestamp); ties keep file order"""
    return frame.sort_values(["user", "timestamp"], kind="mergesort").reset_index(drop=True)


@dataclass
class IdMap:
    """Original id -> dense id mapping for users and items"""

    users: Dict[int, int] = field(default_factory=dict)
    items: Dict[int, int] = field(default_factory=dict)

    def compose(self, inner: "IdMap") -> "IdMap":
        """Map original ids through self then inner (inner re-densifies self's output)"""
        return IdMap(
            users={o: inner.users[d] for o, d in self.users.items() if d in inner.users},
            items={o: inner.items[d] for o, d in self.items.items() if d in inner.items},
        )

    def save(self, path: str) -> None:
        """One mapping per line: kind<TAB>original<TAB>dense"""
        with open(path, "w") as f:
            for kind, mapping in (("user", self.users), ("item", self.items)):
                for original, dense in sorted(mapping.items(), key=lambda kv: kv[1]):
                    f.write(f"{kind}\t{original}\t{dense}\n")

    @classmethod
    def load(cls, path: str) -> "IdMap":
        id_map = cls()
        with open(path) as f:
            for line in f:
                kind, original, dense = line.split()
                target = id_map.users if kind == "user" else id_map.items
                target[int(original)] = int(dense)
        return id_map


@dataclass
class InteractionLog:
    """Time-ordered multi-behavior interactions with dense ids"""

    frame: pd.DataFrame
    n_users: int
    n_items: int
    n_behaviors: int
    target_behavior: int
    id_map: Optional[IdMap] = None

    def __post_init__(self):
        if not (0 <= self.target_behavior < max(self.n_behaviors, 1)):
            raise ValueError(f"target_behavior {self.target_behavior} outside [0, {self.n_behaviors})")

    def __len__(self) -> int:
        return len(self.frame)

    def records(self) -> Iterator[InteractionRecord]:
        for row in self.frame.itertuples(index=False):
            yield InteractionRecord(int(row.user), int(row.item), int(row.timestamp), int(row.behavior))

    def users(self) -> np.ndarray:
        return np.unique(self.frame["user"].to_numpy())

    def user_frames(self) -> Iterator[Tuple[int, pd.DataFrame]]:
        for user, group in self.frame.groupby("user", sort=True):
            yield int(user), group

    def user_sequences(self) -> Dict[int, np.ndarray]:
        """user -> (n, 3) array of (item, timestamp, behavior) in time order"""
        values = self.frame[["item", "timestamp", "behavior"]].to_numpy(dtype=np.int64)
        users = self.frame["user"].to_numpy()
        if len(users) == 0:
            return {}
        boundaries = np.flatnonzero(np.diff(users)) + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries, [len(users)]])
        return {int(users[s]): values[s:e] for s, e in zip(starts, ends)}

    def user_item_sets(self, behavior: Optional[int] = None) -> Dict[int, set]:
        frame = self.frame if behavior is None else self.frame[self.frame["behavior"] == behavior]
        return {int(u): set(g["item"].tolist()) for u, g in frame.groupby("user", sort=True)}

    def with_frame(self, frame: pd.DataFrame, n_users: Optional[int] = None,
                   n_items: Optional[int] = None) -> "InteractionLog":
        return InteractionLog(
            frame=sort_frame(frame),
            n_users=self.n_users if n_users is None else n_users,
            n_items=self.n_items if n_items is None else n_items,
            n_behaviors=self.n_behaviors,
            target_behavior=self.target_behavior,
            id_map=self.id_map,
        )

    def equals(self, other: "InteractionLog") -> bool:
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and self.n_behaviors == other.n_behaviors
            and self.frame[COLUMNS].reset_index(drop=True).equals(other.frame[COLUMNS].reset_index(drop=True))
        )

    def to_tsv(self, path: str) -> None:
        self.frame[COLUMNS].to_csv(path, sep="\t", header=False, index=False)


def densify(frame: pd.DataFrame) -> Tuple[pd.DataFrame, IdMap]:
    """Re-map users and items to dense ids in ascending original-id order"""
    frame = frame.copy()
    user_ids = np.unique(frame["user"].to_numpy())
    item_ids = np.unique(frame["item"].to_numpy())
    id_map = IdMap(
        users={int(o): i for i, o in enumerate(user_ids)},
        items={int(o): i for i, o in enumerate(item_ids)},
    )
    frame["user"] = np.searchsorted(user_ids, frame["user"].to_numpy()).astype("int64")
    frame["item"] = np.searchsorted(item_ids, frame["item"].to_numpy()).astype("int64")
    return frame, id_map


def build_log(frame: pd.DataFrame, n_behaviors: int, target_behavior: int,
              densify_ids: bool = True, n_items: Optional[int] = None) -> InteractionLog:
    if densify_ids:
        frame, id_map = densify(frame)
        n_users, n_items_dense = len(id_map.users), len(id_map.items)
    else:
        id_map = None
        n_users = int(frame["user"].max()) + 1 if len(frame) else 0
        n_items_dense = int(frame["item"].max()) + 1 if len(frame) else 0
    return InteractionLog(
        frame=sort_frame(frame[COLUMNS].astype("int64")),
        n_users=n_users,
        n_items=n_items if n_items is not None else n_items_dense,
        n_behaviors=n_behaviors,
        target_behavior=target_behavior,
        id_map=id_map,
    )


@dataclass
class UserStatistics:
    """Per-user behavior counts and pairwise conversion ratios"""

    counts_per_behavior: List[int]
    conversion_ratios: Dict[Tuple[int, int], float]
    total_length: int

    def ratio(self, source: int, target: int) -> float:
        return self.conversion_ratios[(source, target)]

    def to_vector(self) -> np.ndarray:
        """counts, then ratios in (source, target) lexicographic order, then length"""
        ratios = [self.conversion_ratios[key] for key in sorted(self.conversion_ratios)]
        return np.asarray(list(self.counts_per_behavior) + ratios + [self.total_length], dtype=np.float64)

    @staticmethod
    def vector_size(n_behaviors: int) -> int:
        return n_behaviors + n_behaviors * (n_behaviors - 1) + 1


@dataclass
class UserSplit:
    """Leave-one-out positions within a user's finetune sequence"""

    train_positions: List[int]
    valid_position: Optional[int] = None
    test_position: Optional[int] = None

    @property
    def is_eval_user(self) -> bool:
        return self.test_position is not None


@dataclass
class SplitSpec:
    pretrain_log: Optional[InteractionLog]
    finetune_log: InteractionLog
    users: Dict[int, UserSplit]
    target_behavior: int
    excluded_users: int = 0
    cold_start: bool = False

    @property
    def eval_users(self) -> List[int]:
        return sorted(u for u, s in self.users.items() if s.is_eval_user)

    def summary(self) -> Dict[str, int]:
        return {
            "finetune_users": len(self.users),
            "eval_users": len(self.eval_users),
            "excluded_users": self.excluded_users,
            "target_behavior": self.target_behavior,
        }
