"""
Prompt tuning on a frozen backbone.

Only the prompt module is optimized (the backbone too in the full
fine-tuning harness). Validation ranks each eval user's second-to-last target
item; the best prompt state on validation is kept.
"""

import copy
import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger
from torch import nn

from core.config import RunConfig
from core.exceptions import CheckpointIncompatibleError, TrainingDivergedError
from core.seeding import SeedStreams
from evaluation.evaluator import ModelScorer, evaluate, interacted_items, rank_cases
from evaluation.metrics import mean_metrics
from evaluation.report import EvalReport
from interactions import SplitSpec
from models.behavior_miner import BehaviorMiner
from models.model_manager import ModelManager
from .batching import ITEM, UserFeatureStore, build_tune_cases, iterate_tune_batches, validation_cases
from .budget import ParamBudget, param_budget, set_trainable
from .checkpoint import PROMPTS_KIND, Checkpoint, capture_rng_state, load_checkpoint
from .losses import prediction_loss, tune_loss
from .pretrainer import parameter_norm


def backbone_hash(module: nn.Module) -> str:
    """SHA-256 over every state tensor's bytes, in name order"""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@dataclass
class TuningResult:
    prompt_module: nn.Module
    backbone: BehaviorMiner
    report: EvalReport
    curve: pd.DataFrame
    budget: ParamBudget
    best_epoch: int
    epochs_run: int
    backbone_hash_before: str
    backbone_hash_after: str
    seconds_per_epoch: float = 0.0
    checkpoint: Optional[Checkpoint] = None
    flags: List[str] = field(default_factory=list)

    @property
    def backbone_unchanged(self) -> bool:
        return self.backbone_hash_before == self.backbone_hash_after


class PromptTuner:
    def __init__(self, backbone: BehaviorMiner, prompt_module: nn.Module, store: UserFeatureStore,
                 config: RunConfig, streams: SeedStreams):
        self.backbone = backbone
        self.prompt_module = prompt_module
        self.store = store
        self.config = config
        self.settings = config.tune
        self.streams = streams
        set_trainable(backbone, self.settings.full_finetune)
        trainable = [p for p in list(prompt_module.parameters()) + list(backbone.parameters()) if p.requires_grad]
        self.optimizer = torch.optim.Adam(trainable, lr=self.settings.lr) if trainable else None
        self.rng = streams.numpy("negatives")
        if hasattr(prompt_module, "statistics_generator"):
            prompt_module.statistics_generator.set_standardizer(store.mean, store.std)

    def budget(self) -> ParamBudget:
        return param_budget(self.backbone, self.prompt_module)

    def batch_loss(self, batch) -> Dict[str, torch.Tensor]:
        prompt = self.config.prompt
        output = self.prompt_module(batch.features, self.backbone.tables)
        users = self.backbone(*batch.sequence.tensors(), prompts=output.tokens)
        table = self.backbone.tables.item_table
        e_p, e_n = table[batch.pos_items], table[batch.neg_items]
        total = tune_loss(
            users, e_p, e_n, output.factors, output.prompts, lambda_=self.settings.effective_lambda,
            n_factors=prompt.n_factors, lambda_e=prompt.lambda_e, lambda_p=prompt.lambda_p,
            eps_e2=prompt.eps_e2, eps_p2=prompt.eps_p2, sign=prompt.compactness_sign,
        )
        return {"total": total, "pred": prediction_loss(users.detach(), e_p.detach(), e_n.detach())}

    def train_epoch(self, epoch: int, cases, excluded) -> Dict[str, float]:
        self.backbone.train()
        totals, preds = [], []
        batches = iterate_tune_batches(self.store, cases, self.settings.batch_size,
                                       self.backbone.n_items, excluded, self.rng)
        for index, batch in enumerate(batches):
            losses = self.batch_loss(batch)
            value = float(losses["total"].detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, index, parameter_norm(self.prompt_module), value)
            if self.optimizer is not None:
                self.optimizer.zero_grad()
                losses["total"].backward()
                self.optimizer.step()
            totals.append(value)
            preds.append(float(losses["pred"]))
            logger.debug(f"tune epoch {epoch} batch {index}: loss={value:.6f}")
        mean = lambda values: float(np.mean(values)) if values else float("nan")
        return {"train_loss": mean(totals), "pred_loss": mean(preds)}

    def validate(self, spec: SplitSpec) -> float:
        cases = validation_cases(spec)
        if not cases:
            return float("nan")
        sequences = self.store.sequences
        targets = [int(sequences[c.user][c.target, ITEM]) for c in cases]
        interacted = interacted_items(spec)
        scorer = ModelScorer(self.backbone, self.store, self.prompt_module)
        ranks = rank_cases(scorer, cases, targets, interacted, self.backbone.n_items,
                           self.settings.valid_negatives, self.streams.torch_seed("valid"), pad=True)
        metrics = mean_metrics(ranks.tolist(), self.settings.valid_ks)
        return sum(metrics[f"NDCG@{k}"] for k in self.settings.valid_ks)

    def fit(self, spec: SplitSpec, curve_path: Optional[str] = None):
        settings = self.settings
        cases = build_tune_cases(spec)
        excluded = self.store.item_sets(spec.target_behavior)
        logger.info(f"Tuning on {len(cases)} target-behavior examples, "
                    f"{len(spec.eval_users)} eval users, flags={settings.ablation_flags()}")
        best_state = copy.deepcopy(self.prompt_module.state_dict())
        best_backbone = copy.deepcopy(self.backbone.state_dict()) if settings.full_finetune else None
        best_score, best_epoch, bad_epochs, epoch = None, 0, 0, 0
        rows, elapsed = [], []
        for epoch in range(1, settings.max_epochs + 1):
            started = time.perf_counter()
            losses = self.train_epoch(epoch, cases, excluded)
            elapsed.append(time.perf_counter() - started)
            metric = self.validate(spec)
            score = -losses["train_loss"] if math.isnan(metric) else metric
            rows.append({"epoch": epoch, **losses, "valid_ndcg": metric})
            logger.info(f"tune epoch {epoch}: loss={losses['train_loss']:.6f} valid_ndcg={metric:.6f}")
            if best_score is None or score > best_score:
                best_score, best_epoch, bad_epochs = score, epoch, 0
                best_state = copy.deepcopy(self.prompt_module.state_dict())
                if settings.full_finetune:
                    best_backbone = copy.deepcopy(self.backbone.state_dict())
            else:
                bad_epochs += 1
                if bad_epochs >= settings.patience:
                    logger.info(f"Early stopping at epoch {epoch}; best epoch {best_epoch}")
                    break
        self.prompt_module.load_state_dict(best_state)
        if best_backbone is not None:
            self.backbone.load_state_dict(best_backbone)
        curve = pd.DataFrame(rows, columns=["epoch", "train_loss", "pred_loss", "valid_ndcg"])
        if curve_path:
            curve.to_csv(curve_path, index=False)
        seconds = float(np.mean(elapsed)) if elapsed else 0.0
        return curve, best_epoch, epoch, best_score, seconds

    def checkpoint(self, epoch: int, metric: Optional[float], fingerprint: str,
                   extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
        return Checkpoint(
            kind=PROMPTS_KIND,
            header=prompt_header(self.backbone, self.config),
            fingerprint=fingerprint,
            state=copy.deepcopy(self.prompt_module.state_dict()),
            optimizer_state=None if self.optimizer is None else copy.deepcopy(self.optimizer.state_dict()),
            epoch=epoch,
            rng_state=capture_rng_state(self.rng),
            metric=metric,
            extra=extra or {},
        )


def prompt_header(backbone: BehaviorMiner, config: RunConfig) -> Dict[str, Any]:
    prompt, tune = config.prompt, config.tune
    return {
        **backbone.header(),
        "prompt_dim": prompt.prompt_dim,
        "n_factors": prompt.n_factors,
        "n_tokens": prompt.n_tokens,
        "static_prompt": tune.static_prompt,
        "first_layer_only": tune.first_layer_only,
        "no_denoise": tune.no_denoise,
    }


def check_backbone_config(backbone: BehaviorMiner, config: RunConfig):
    """The tuning config must describe the checkpoint's backbone"""
    expected = ModelManager(config).backbone_header(backbone.n_items, backbone.n_behaviors)
    fields = sorted(key for key, value in expected.items() if backbone.header().get(key) != value)
    if fields:
        raise CheckpointIncompatibleError(fields)


def run_tuning(backbone: BehaviorMiner, spec: SplitSpec, config: RunConfig,
               attributes: Optional[np.ndarray] = None, attribute_vocab: Optional[List[int]] = None,
               streams: Optional[SeedStreams] = None, curve_path: Optional[str] = None,
               prompt_module: Optional[nn.Module] = None) -> TuningResult:
    """Tune prompts for ``spec.target_behavior`` and evaluate on the held-out test items"""
    check_backbone_config(backbone, config)
    backbone.set_denoising(not config.tune.no_denoise)
    streams = streams or SeedStreams(config.seed)
    store = UserFeatureStore(spec, attributes, seq_len=config.tune.seq_len)
    if prompt_module is None:
        vocab = attribute_vocab if attribute_vocab is not None else vocab_from(store.attributes)
        manager = ModelManager(config, dtype=backbone.tables.item_table.dtype)
        prompt_module = manager.build_prompt_module(backbone, vocab, store.n_statistics,
                                                    streams.torch("init_prompt"))
    before = backbone_hash(backbone)
    tuner = PromptTuner(backbone, prompt_module, store, config, streams)
    budget = tuner.budget()
    logger.info(f"Trainable parameters: {budget.trainable} / {budget.total} ({budget.ratio:.4%})")
    curve, best_epoch, epochs_run, best_score, seconds = tuner.fit(spec, curve_path)
    after = backbone_hash(backbone)
    if not config.tune.full_finetune and before != after:
        raise RuntimeError("frozen backbone changed during prompt tuning")

    eval_cfg = config.eval
    report = evaluate(
        ModelScorer(backbone, store, prompt_module), spec, spec.target_behavior, ks=eval_cfg.ks,
        n_neg=eval_cfg.n_neg, seed=config.seed if eval_cfg.seed is None else eval_cfg.seed,
        fingerprint=config.fingerprint(), cold_start=eval_cfg.cold_start,
    )
    checkpoint = tuner.checkpoint(best_epoch, best_score, config.tuning_fingerprint(),
                                  extra={"backbone_hash": after, "target_behavior": spec.target_behavior})
    return TuningResult(
        prompt_module=prompt_module, backbone=backbone, report=report, curve=curve, budget=budget,
        best_epoch=best_epoch, epochs_run=epochs_run, backbone_hash_before=before,
        backbone_hash_after=after, seconds_per_epoch=seconds, checkpoint=checkpoint,
        flags=config.tune.ablation_flags(),
    )


def restore_prompt_module(path: str, backbone: BehaviorMiner, config: RunConfig,
                          attribute_vocab: List[int], n_statistics: int) -> nn.Module:
    """Load tuned prompts; the file must match both the backbone and the tuning config"""
    backbone.set_denoising(not config.tune.no_denoise)
    checkpoint = load_checkpoint(path, expected_header=prompt_header(backbone, config),
                                 expected_fingerprint=config.tuning_fingerprint(), kind=PROMPTS_KIND)
    manager = ModelManager(config, dtype=backbone.tables.item_table.dtype)
    module = manager.build_prompt_module(backbone, attribute_vocab, n_statistics)
    module.load_state_dict(checkpoint.state)
    stored = checkpoint.extra.get("backbone_hash")
    if stored is not None and stored != backbone_hash(backbone):
        raise CheckpointIncompatibleError(["backbone_hash"], "prompts were tuned against a different backbone")
    return module


def vocab_from(attributes: np.ndarray) -> List[int]:
    """Per-field vocabulary size inferred from observed values"""
    if attributes.size == 0:
        return []
    return [int(max(attributes[:, field].max(), -1)) + 1 for field in range(attributes.shape[1])]
