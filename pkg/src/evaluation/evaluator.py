"""
Leave-one-out evaluation with sampled negatives.

Each eval user's test item is ranked against ``n_neg`` items the user never
interacted with under any behavior. Negatives come from a per-user generator
seeded with ``(seed, user)``, so reports are reproducible and independent of
batch composition.
"""

from typing import Dict, Optional, Protocol, Sequence, Set

import numpy as np
import torch
from loguru import logger

from core.exceptions import ProtocolError
from interactions import SplitSpec, UserSplit, make_split_spec
from training.batching import ITEM, TuneCase, UserFeatureStore, evaluation_cases
from .metrics import mean_metrics, pad_candidate_rows, target_ranks
from .report import EvalReport


class CandidateScorer(Protocol):
    def score(self, cases: Sequence[TuneCase], candidates: np.ndarray) -> np.ndarray:
        """(n, m) scores for candidate ids (n, m), one row per case"""


class ModelScorer:
    """Scores candidates with u·e_v from a backbone and optional prompt module"""

    def __init__(self, backbone: torch.nn.Module, store: UserFeatureStore,
                 prompt_module: Optional[torch.nn.Module] = None, batch_size: int = 256):
        self.backbone = backbone
        self.store = store
        self.prompt_module = prompt_module
        self.batch_size = batch_size

    def encode(self, cases: Sequence[TuneCase]) -> torch.Tensor:
        sequence, features = self.store.collate(cases)
        prompts = None
        if self.prompt_module is not None:
            prompts = self.prompt_module(features, self.backbone.tables).tokens
        return self.backbone(*sequence.tensors(), prompts=prompts)

    def score(self, cases: Sequence[TuneCase], candidates: np.ndarray) -> np.ndarray:
        was_training = self.backbone.training
        self.backbone.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(cases), self.batch_size):
                chunk = cases[start:start + self.batch_size]
                users = self.encode(chunk)
                ids = torch.as_tensor(candidates[start:start + self.batch_size])
                out.append(self.backbone.score_items(users, ids).double().cpu().numpy())
        self.backbone.train(was_training)
        return np.concatenate(out) if out else np.zeros((0, candidates.shape[1]))


def interacted_items(spec: SplitSpec) -> Dict[int, Set[int]]:
    sets = spec.finetune_log.user_item_sets()
    if spec.pretrain_log is not None:
        for user, items in spec.pretrain_log.user_item_sets().items():
            sets.setdefault(user, set()).update(items)
    return sets


def candidate_matrix(cases: Sequence[TuneCase], targets: Sequence[int], interacted: Dict[int, Set[int]],
                     n_items: int, n_neg: int, seed: int, pad: bool = False) -> np.ndarray:
    """Row i = [target_i, n_neg negatives drawn with default_rng([seed, user_i])].

    With ``pad`` a user with fewer eligible items gets all of them and the row
    is filled up with the target instead of raising ``ProtocolError``.
    """
    rows = []
    for case, target in zip(cases, targets):
        excluded = interacted.get(case.user, set()) | {int(target)}
        eligible = np.setdiff1d(np.arange(n_items), np.fromiter(excluded, dtype=np.int64))
        if len(eligible) < n_neg and not pad:
            raise ProtocolError(
                f"user {case.user} has {len(eligible)} eligible negatives, {n_neg} required",
                user=case.user, eligible=int(len(eligible)), n_neg=n_neg,
            )
        rng = np.random.default_rng([seed, case.user])
        negatives = rng.choice(eligible, size=min(n_neg, len(eligible)), replace=False)
        rows.append(np.concatenate([[int(target)], negatives]).astype(np.int64))
    if not rows:
        return np.empty((0, n_neg + 1), dtype=np.int64)
    return pad_candidate_rows(rows)


def rank_cases(scorer: CandidateScorer, cases: Sequence[TuneCase], targets: Sequence[int],
               interacted: Dict[int, Set[int]], n_items: int, n_neg: int, seed: int,
               pad: bool = False) -> np.ndarray:
    candidates = candidate_matrix(cases, targets, interacted, n_items, n_neg, seed, pad)
    if not len(cases):
        return np.zeros(0, dtype=np.int64)
    return target_ranks(scorer.score(cases, candidates), candidates)


def target_counts(spec: SplitSpec, target_behavior: int) -> Dict[int, int]:
    frame = spec.finetune_log.frame
    counts = frame[frame["behavior"] == target_behavior].groupby("user").size()
    return {int(u): int(counts.get(u, 0)) for u in spec.users}


def cold_start_subset(spec: SplitSpec, target_behavior: Optional[int] = None,
                      max_targets: int = 2) -> SplitSpec:
    """Keep as eval users only those with at most ``max_targets`` target interactions"""
    target = spec.target_behavior if target_behavior is None else target_behavior
    if target != spec.target_behavior:
        spec = make_split_spec(spec.finetune_log, target, spec.pretrain_log)
    counts = target_counts(spec, target)
    users = {
        user: split if counts[user] <= max_targets else UserSplit(train_positions=split.train_positions)
        for user, split in spec.users.items()
    }
    subset = SplitSpec(
        pretrain_log=spec.pretrain_log,
        finetune_log=spec.finetune_log,
        users=users,
        target_behavior=target,
        excluded_users=spec.excluded_users,
        cold_start=True,
    )
    logger.info(f"Cold-start subset: {len(subset.eval_users)} of {len(spec.eval_users)} eval users")
    return subset


def evaluate(model: CandidateScorer, spec: SplitSpec, target_behavior: Optional[int] = None,
             ks: Sequence[int] = (10, 20), n_neg: int = 100, seed: int = 0, fingerprint: str = "",
             cold_start: bool = False, n_items: Optional[int] = None) -> EvalReport:
    """HR@K and NDCG@K averaged over eval users of ``spec`` for ``target_behavior``"""
    target = spec.target_behavior if target_behavior is None else target_behavior
    if target != spec.target_behavior:
        spec = make_split_spec(spec.finetune_log, target, spec.pretrain_log)
    if cold_start:
        spec = cold_start_subset(spec, target)
    ks = sorted(set(int(k) for k in ks))
    n_items = spec.finetune_log.n_items if n_items is None else n_items
    sequences = spec.finetune_log.user_sequences()

    cases = evaluation_cases(spec)
    skipped = len(spec.eval_users) - len(cases)
    if skipped:
        logger.warning(f"{skipped} eval users have no history before their test item; skipped")
    targets = [int(sequences[c.user][c.target, ITEM]) for c in cases]
    ranks = rank_cases(model, cases, targets, interacted_items(spec), n_items, n_neg, seed)

    report = EvalReport(
        metrics=mean_metrics(ranks.tolist(), ks),
        ks=ks,
        n_eval_users=len(cases),
        target_behavior=target,
        n_neg=n_neg,
        seed=seed,
        fingerprint=fingerprint,
        cold_start=cold_start,
        empty=len(cases) == 0,
        task=f"behavior_{target}" + ("_cold_start" if cold_start else ""),
    )
    if report.empty:
        logger.warning("Evaluation subset is empty; report flagged")
    else:
        summary = ", ".join(f"{name}={value:.4f}" for name, value in report.metrics.items())
        logger.info(f"Evaluated {len(cases)} users on behavior {target}: {summary}")
    return report
