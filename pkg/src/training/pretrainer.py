"""
Pretraining: next-item plus next-behavior BPR objective over multi-behavior
prefixes, Adam, per-epoch validation and early stopping.
"""

import copy
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger

from core.config import RunConfig
from core.exceptions import RecommenderError, TrainingDivergedError
from core.seeding import SeedStreams
from evaluation.metrics import mean_metrics, pad_candidate_rows, target_ranks
from interactions import InteractionLog
from models.behavior_miner import BehaviorMiner
from models.model_manager import ModelManager
from .batching import (
    ITEM, PretrainExamples, build_pretrain_examples, collate_histories, contexts_for,
    iterate_pretrain_batches,
)
from .checkpoint import BACKBONE_KIND, Checkpoint, capture_rng_state
from .losses import pretrain_loss
from .sampling import sample_negative_items


@dataclass
class PretrainResult:
    model: BehaviorMiner
    checkpoint: Checkpoint
    curve: pd.DataFrame
    best_epoch: int
    epochs_run: int
    stopped_early: bool


def parameter_norm(model: torch.nn.Module) -> float:
    with torch.no_grad():
        return float(torch.sqrt(sum((p.double() ** 2).sum() for p in model.parameters())))


class PretrainValidator:
    """Next-item NDCG on each user's held-out last event with fixed sampled negatives"""

    def __init__(self, examples: PretrainExamples, n_items: int, interacted: dict, n_neg: int,
                 ks: List[int], seq_len: int, streams: SeedStreams, batch_size: int = 256):
        self.examples, self.ks, self.seq_len, self.batch_size = examples, ks, seq_len, batch_size
        rows = []
        for user, t in examples.index:
            target = int(examples.sequences[int(user)][int(t), ITEM])
            excluded = set(interacted.get(int(user), set())) | {target}
            n = min(n_neg, n_items - len(excluded))
            negatives = sample_negative_items(excluded, n_items, max(n, 0), streams.numpy("valid", int(user)))
            rows.append(np.concatenate([[target], negatives]))
        self.candidates = pad_candidate_rows(rows)

    def __len__(self) -> int:
        return len(self.examples)

    def score(self, model: BehaviorMiner) -> float:
        """Sum of NDCG@K over the configured cut-offs"""
        if not len(self):
            return float("nan")
        model.eval()
        ranks = []
        with torch.no_grad():
            for start in range(0, len(self), self.batch_size):
                rows = self.examples.index[start:start + self.batch_size]
                sequence = collate_histories(contexts_for(self.examples, rows), self.seq_len)
                users = model(*sequence.tensors())
                candidates = self.candidates[start:start + self.batch_size]
                scores = model.score_items(users, torch.as_tensor(candidates)).double().numpy()
                ranks.extend(target_ranks(scores, candidates).tolist())
        model.train()
        metrics = mean_metrics(ranks, self.ks)
        return sum(metrics[f"NDCG@{k}"] for k in self.ks)


class Pretrainer:
    def __init__(self, model: BehaviorMiner, config: RunConfig, streams: SeedStreams,
                 fingerprint: str = ""):
        self.model = model
        self.config = config
        self.settings = config.pretrain
        self.streams = streams
        self.fingerprint = fingerprint
        self.optimizer = torch.optim.Adam(model.parameters(), lr=self.settings.lr)
        self.rng = streams.numpy("negatives")

    def train_epoch(self, epoch: int, examples: PretrainExamples, interacted: dict) -> float:
        model, settings = self.model, self.settings
        model.train()
        losses = []
        batches = iterate_pretrain_batches(
            examples, settings.batch_size, model.max_len, model.n_items, model.n_behaviors,
            interacted, self.rng,
        )
        for index, batch in enumerate(batches):
            if settings.max_batches_per_epoch is not None and index >= settings.max_batches_per_epoch:
                break
            users = model(*batch.sequence.tensors())
            tables = model.tables
            loss = pretrain_loss(
                users,
                tables.item_table[batch.pos_items], tables.item_table[batch.neg_items],
                tables.behavior_table[batch.pos_behaviors], tables.behavior_table[batch.neg_behaviors],
            )
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, index, parameter_norm(model), value)
            self.optimizer.zero_grad()
            loss.backward()
            self.optimizer.step()
            losses.append(value)
            logger.debug(f"pretrain epoch {epoch} batch {index}: loss={value:.6f}")
        return float(np.mean(losses)) if losses else float("nan")

    def checkpoint(self, epoch: int, metric: Optional[float]) -> Checkpoint:
        return Checkpoint(
            kind=BACKBONE_KIND,
            header=self.model.header(),
            fingerprint=self.fingerprint,
            state=copy.deepcopy(self.model.state_dict()),
            optimizer_state=copy.deepcopy(self.optimizer.state_dict()),
            epoch=epoch,
            rng_state=capture_rng_state(self.rng),
            metric=metric,
        )

    def fit(self, log: InteractionLog, curve_path: Optional[str] = None) -> PretrainResult:
        settings = self.settings
        train, valid = build_pretrain_examples(log, settings.min_ctx, settings.prefix_mode)
        if not len(train):
            raise RecommenderError(
                f"no pretraining examples: every user has at most {settings.min_ctx} events before the held-out one"
            )
        interacted = log.user_item_sets()
        validator = PretrainValidator(valid, self.model.n_items, interacted, settings.valid_negatives,
                                      settings.valid_ks, self.model.max_len, self.streams)
        logger.info(f"Pretraining on {len(train)} examples, validating on {len(validator)} users")

        rows, best, best_epoch, bad_epochs = [], None, 0, 0
        stopped_early, epoch = False, 0
        for epoch in range(1, settings.max_epochs + 1):
            train_loss = self.train_epoch(epoch, train, interacted)
            metric = validator.score(self.model)
            # without validation users, early stopping follows the training loss
            score = -train_loss if math.isnan(metric) else metric
            rows.append({"epoch": epoch, "train_loss": train_loss, "valid_ndcg": metric})
            logger.info(f"pretrain epoch {epoch}: loss={train_loss:.6f} valid_ndcg={metric:.6f}")
            if best is None or score > best.metric:
                best, best_epoch, bad_epochs = self.checkpoint(epoch, score), epoch, 0
            else:
                bad_epochs += 1
                if bad_epochs >= settings.patience:
                    stopped_early = True
                    logger.info(f"Early stopping at epoch {epoch}; best epoch {best_epoch}")
                    break

        if best is None:
            best = self.checkpoint(0, None)
        self.model.load_state_dict(best.state)
        curve = pd.DataFrame(rows, columns=["epoch", "train_loss", "valid_ndcg"])
        if curve_path:
            curve.to_csv(curve_path, index=False)
        return PretrainResult(model=self.model, checkpoint=best, curve=curve, best_epoch=best_epoch,
                              epochs_run=epoch, stopped_early=stopped_early)


def run_pretraining(log: InteractionLog, config: RunConfig, streams: Optional[SeedStreams] = None,
                    model: Optional[BehaviorMiner] = None, curve_path: Optional[str] = None,
                    dtype: torch.dtype = torch.float32) -> PretrainResult:
    """Build (or take) a backbone, pretrain it on ``log`` and return the best checkpoint"""
    if not len(log):
        raise RecommenderError("cannot pretrain on an empty interaction log")
    streams = streams or SeedStreams(config.seed)
    if model is None:
        manager = ModelManager(config, dtype=dtype)
        model = manager.build_backbone(log.n_items, log.n_behaviors, streams.torch("init"))
    trainer = Pretrainer(model, config, streams, fingerprint=config.backbone_fingerprint())
    return trainer.fit(log, curve_path)

