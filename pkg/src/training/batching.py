"""
Example construction and mini-batch collation for pretraining and tuning.

Histories are (item, behavior) rows in time order. Collation left-pads each
history to the window length and assigns positions by slot.
"""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch

from interactions import InteractionLog, SplitSpec, UserStatistics
from interactions.statistics import fit_standardizer, statistics_matrix
from models.prompt_learner import PromptFeatures
from .sampling import sample_negative_behavior, sample_negative_item

ITEM, TIMESTAMP, BEHAVIOR = 0, 1, 2


@dataclass
class SequenceBatch:
    items: torch.Tensor
    positions: torch.Tensor
    behaviors: torch.Tensor
    mask: torch.Tensor

    def tensors(self) -> Tuple[torch.Tensor, ...]:
        return self.items, self.positions, self.behaviors, self.mask

    def __len__(self) -> int:
        return self.items.shape[0]


def collate_histories(histories: Sequence[np.ndarray], seq_len: int) -> SequenceBatch:
    """Left-pad (n, 2) item/behavior histories, keeping the most recent ``seq_len`` rows"""
    n = len(histories)
    items = np.zeros((n, seq_len), dtype=np.int64)
    behaviors = np.zeros((n, seq_len), dtype=np.int64)
    positions = np.zeros((n, seq_len), dtype=np.int64)
    mask = np.zeros((n, seq_len), dtype=bool)
    for row, history in enumerate(histories):
        history = history[len(history) - seq_len:] if len(history) > seq_len else history
        offset = seq_len - len(history)
        items[row, offset:] = history[:, 0]
        behaviors[row, offset:] = history[:, 1]
        positions[row, offset:] = np.arange(offset, seq_len)
        mask[row, offset:] = True
    return SequenceBatch(
        items=torch.from_numpy(items), positions=torch.from_numpy(positions),
        behaviors=torch.from_numpy(behaviors), mask=torch.from_numpy(mask),
    )


def history_rows(sequence: np.ndarray, positions: Optional[Sequence[int]] = None) -> np.ndarray:
    rows = sequence if positions is None else sequence[np.asarray(positions, dtype=np.int64)]
    return rows[:, [ITEM, BEHAVIOR]].reshape(-1, 2)


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainExamples:
    """(user, target index) pairs over per-user sequences; context = events before the target"""

    sequences: Dict[int, np.ndarray]
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class PretrainBatch:
    sequence: SequenceBatch
    pos_items: torch.Tensor
    pos_behaviors: torch.Tensor
    neg_items: torch.Tensor
    neg_behaviors: torch.Tensor


def build_pretrain_examples(log: InteractionLog, min_ctx: int = 4, prefix_mode: str = "all",
                            holdout_last: bool = True) -> Tuple[PretrainExamples, PretrainExamples]:
    """Training prefixes plus one validation case per user (its last event).

    With ``prefix_mode="all"`` every target index with at least ``min_ctx``
    earlier events is an example; ``"final"`` keeps only the last one.
    """
    if prefix_mode not in ("all", "final"):
        raise ValueError(f"unknown prefix mode '{prefix_mode}'")
    sequences = log.user_sequences()
    min_ctx = max(1, min_ctx)
    train, valid = [], []
    for user, sequence in sequences.items():
        n = len(sequence)
        end = n
        if holdout_last and n >= 2:
            valid.append((user, n - 1))
            end = n - 1
        targets = range(min_ctx, end) if prefix_mode == "all" else [end - 1] if end - 1 >= min_ctx else []
        train.extend((user, t) for t in targets)
    as_index = lambda pairs: np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return PretrainExamples(sequences, as_index(train)), PretrainExamples(sequences, as_index(valid))


def contexts_for(examples: PretrainExamples, rows: np.ndarray) -> List[np.ndarray]:
    return [history_rows(examples.sequences[int(u)][:int(t)]) for u, t in rows]


def iterate_pretrain_batches(examples: PretrainExamples, batch_size: int, seq_len: int, n_items: int,
                             n_behaviors: int, interacted: Dict[int, Set[int]],
                             rng: np.random.Generator, shuffle: bool = True) -> Iterator[PretrainBatch]:
    order = rng.permutation(len(examples)) if shuffle else np.arange(len(examples))
    for start in range(0, len(order), batch_size):
        rows = examples.index[order[start:start + batch_size]]
        targets = np.stack([examples.sequences[int(u)][int(t)] for u, t in rows])
        neg_items = [sample_negative_item(interacted[int(u)], n_items, rng) for u, _ in rows]
        neg_behaviors = [sample_negative_behavior(int(b), n_behaviors, rng) for b in targets[:, BEHAVIOR]]
        yield PretrainBatch(
            sequence=collate_histories(contexts_for(examples, rows), seq_len),
            pos_items=torch.as_tensor(targets[:, ITEM]),
            pos_behaviors=torch.as_tensor(targets[:, BEHAVIOR]),
            neg_items=torch.as_tensor(neg_items, dtype=torch.long),
            neg_behaviors=torch.as_tensor(neg_behaviors, dtype=torch.long),
        )


# --------------------------------------------------------------------- tuning

@dataclass
class TuneCase:
    """Predict the item at ``target`` from the events at ``context`` positions"""

    user: int
    context: np.ndarray
    target: int


@dataclass
class TuneBatch:
    sequence: SequenceBatch
    features: PromptFeatures
    pos_items: torch.Tensor
    neg_items: torch.Tensor
    users: List[int]


def build_tune_cases(spec: SplitSpec) -> List[TuneCase]:
    """Every target-behavior train position with at least one earlier train event"""
    sequences = spec.finetune_log.user_sequences()
    cases = []
    for user, split in sorted(spec.users.items()):
        train = np.asarray(split.train_positions, dtype=np.int64)
        if not len(train):
            continue
        behaviors = sequences[user][train, BEHAVIOR]
        for index in np.flatnonzero(behaviors == spec.target_behavior):
            if index > 0:
                cases.append(TuneCase(user=user, context=train[:index], target=int(train[index])))
    return cases


def validation_cases(spec: SplitSpec) -> List[TuneCase]:
    cases = []
    for user in spec.eval_users:
        split = spec.users[user]
        context = np.asarray([p for p in split.train_positions if p < split.valid_position], dtype=np.int64)
        if len(context):
            cases.append(TuneCase(user=user, context=context, target=split.valid_position))
    return cases


def evaluation_cases(spec: SplitSpec) -> List[TuneCase]:
    cases = []
    for user in spec.eval_users:
        split = spec.users[user]
        context = np.asarray(split.train_positions, dtype=np.int64)
        if len(context):
            cases.append(TuneCase(user=user, context=context, target=split.test_position))
    return cases


class UserFeatureStore:
    """Per-user sequences, attributes and standardized statistics of a tuning split"""

    def __init__(self, spec: SplitSpec, attributes: Optional[np.ndarray] = None, seq_len: int = 32):
        log = spec.finetune_log
        self.spec = spec
        self.seq_len = seq_len
        self.n_behaviors = log.n_behaviors
        self.sequences = log.user_sequences()
        self.n_users = max([log.n_users] + [u + 1 for u in self.sequences])
        if attributes is None:
            attributes = np.full((self.n_users, 0), -1, dtype=np.int64)
        self.attributes = np.asarray(attributes, dtype=np.int64)
        width = UserStatistics.vector_size(self.n_behaviors)
        self.statistics = np.zeros((self.n_users, width))
        fitted = list(spec.users)
        if fitted:
            self.statistics[fitted] = statistics_matrix(
                [self.sequences[u][spec.users[u].train_positions, BEHAVIOR].tolist() for u in fitted],
                self.n_behaviors,
            )
        self.mean, self.std = fit_standardizer(self.statistics[fitted] if fitted else np.zeros((0, width)))

    @property
    def n_statistics(self) -> int:
        return self.statistics.shape[1]

    def item_sets(self, behavior: Optional[int] = None) -> Dict[int, Set[int]]:
        """Items each user touched in the finetune split, and in pretraining when available"""
        sets = self.spec.finetune_log.user_item_sets(behavior)
        if self.spec.pretrain_log is not None:
            for user, items in self.spec.pretrain_log.user_item_sets(behavior).items():
                sets.setdefault(user, set()).update(items)
        return sets

    def attribute_rows(self, users: Sequence[int]) -> torch.Tensor:
        rows = np.asarray(users, dtype=np.int64)
        if self.attributes.shape[0] == 0 or self.attributes.shape[1] == 0:
            return torch.full((len(rows), 0), -1, dtype=torch.long)
        return torch.from_numpy(self.attributes[rows])

    def collate(self, cases: Sequence[TuneCase]) -> Tuple[SequenceBatch, PromptFeatures]:
        histories = [history_rows(self.sequences[c.user], c.context) for c in cases]
        sequence = collate_histories(histories, self.seq_len)
        users = [c.user for c in cases]
        features = PromptFeatures(
            attributes=self.attribute_rows(users),
            statistics=torch.from_numpy(self.statistics[np.asarray(users, dtype=np.int64)]),
            items=sequence.items,
            behaviors=sequence.behaviors,
            mask=sequence.mask,
        )
        return sequence, features

    def target_items(self, cases: Sequence[TuneCase]) -> torch.Tensor:
        return torch.as_tensor([int(self.sequences[c.user][c.target, ITEM]) for c in cases], dtype=torch.long)


def iterate_tune_batches(store: UserFeatureStore, cases: Sequence[TuneCase], batch_size: int,
                         n_items: int, excluded: Dict[int, Set[int]], rng: np.random.Generator,
                         shuffle: bool = True) -> Iterator[TuneBatch]:
    """Negatives avoid the items in ``excluded[user]`` (target-behavior items by default)"""
    order = rng.permutation(len(cases)) if shuffle else np.arange(len(cases))
    for start in range(0, len(order), batch_size):
        chunk = [cases[i] for i in order[start:start + batch_size]]
        sequence, features = store.collate(chunk)
        negatives = [sample_negative_item(excluded.get(c.user, set()), n_items, rng) for c in chunk]
        yield TuneBatch(
            sequence=sequence,
            features=features,
            pos_items=store.target_items(chunk),
            neg_items=torch.as_tensor(negatives, dtype=torch.long),
            users=[c.user for c in chunk],
        )
