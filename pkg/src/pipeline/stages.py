"""
Pipeline stages shared by the run manager and the experiments:
filter + split, pretraining, prompt tuning and evaluation.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from loguru import logger

from core.config import RunConfig
from core.seeding import SeedStreams
from evaluation.evaluator import ModelScorer, evaluate
from evaluation.report import EvalReport
from interactions import (
    IdMap, InteractionLog, SplitReport, SplitSpec, filter_min_interactions, make_split_spec,
    temporal_split_with_report,
)
from models.behavior_miner import BehaviorMiner
from training.batching import UserFeatureStore
from training.pretrainer import PretrainResult, run_pretraining
from training.tuner import TuningResult, run_tuning, vocab_from


@dataclass
class PreparedData:
    log: InteractionLog
    pretrain: InteractionLog
    finetune: InteractionLog
    spec: SplitSpec
    attributes: np.ndarray
    attribute_vocab: List[int]
    split_report: SplitReport

    def summary(self) -> Dict[str, Any]:
        return {
            "n_users": self.log.n_users,
            "n_items": self.log.n_items,
            "n_behaviors": self.log.n_behaviors,
            "n_records": len(self.log),
            "attribute_vocab": list(self.attribute_vocab),
            **self.split_report.to_dict(),
            **self.spec.summary(),
        }


def remap_attributes(attributes: Optional[np.ndarray], id_map: Optional[IdMap], n_users: int) -> np.ndarray:
    """Rows indexed by original user id -> rows indexed by dense id; unmatched users get -1"""
    if attributes is None:
        return np.full((n_users, 0), -1, dtype=np.int64)
    attributes = np.asarray(attributes, dtype=np.int64)
    if id_map is None:
        return attributes[:n_users]
    dense = np.full((n_users, attributes.shape[1]), -1, dtype=np.int64)
    for original, index in id_map.users.items():
        if 0 <= original < len(attributes) and index < n_users:
            dense[index] = attributes[original]
    return dense


def target_behavior_for(config: RunConfig, log: InteractionLog) -> int:
    for value in (config.tune.target_behavior, config.data.target_behavior):
        if value is not None:
            return int(value)
    return log.target_behavior


def split_data(log: InteractionLog, attributes: np.ndarray, config: RunConfig,
               attribute_vocab: Optional[List[int]] = None) -> PreparedData:
    """Temporal split plus leave-one-out positions on an already filtered log"""
    data = config.data
    pretrain, finetune, report = temporal_split_with_report(
        log, data.split_ratio, data.split_granularity, data.min_finetune)
    spec = make_split_spec(finetune, target_behavior_for(config, log), pretrain)
    vocab = list(attribute_vocab) if attribute_vocab is not None else vocab_from(attributes)
    return PreparedData(log=log, pretrain=pretrain, finetune=finetune, spec=spec,
                        attributes=attributes, attribute_vocab=vocab, split_report=report)


def prepare_data(log: InteractionLog, attributes: Optional[np.ndarray], config: RunConfig) -> PreparedData:
    """Filter at the configured threshold, then split"""
    filtered = filter_min_interactions(log, config.data.min_interactions)
    dense = remap_attributes(attributes, filtered.id_map, filtered.n_users)
    prepared = split_data(filtered, dense, config)
    logger.info(f"Prepared data: {prepared.spec.summary()}")
    return prepared


def pretrain_stage(prepared: PreparedData, config: RunConfig, curve_path: Optional[str] = None) -> PretrainResult:
    return run_pretraining(prepared.pretrain, config, SeedStreams(config.seed), curve_path=curve_path)


def tune_stage(prepared: PreparedData, backbone: BehaviorMiner, config: RunConfig,
               curve_path: Optional[str] = None) -> TuningResult:
    spec = prepared.spec
    target = target_behavior_for(config, prepared.log)
    if target != spec.target_behavior:
        spec = make_split_spec(prepared.finetune, target, prepared.pretrain)
    return run_tuning(backbone, spec, config, attributes=prepared.attributes,
                      attribute_vocab=prepared.attribute_vocab, streams=SeedStreams(config.seed),
                      curve_path=curve_path)


def evaluate_stage(prepared: PreparedData, backbone: BehaviorMiner, config: RunConfig,
                   prompt_module=None) -> EvalReport:
    eval_cfg = config.eval
    target = eval_cfg.target_behavior
    if target is None:
        target = target_behavior_for(config, prepared.log)
    spec = prepared.spec
    if target != spec.target_behavior:
        spec = make_split_spec(prepared.finetune, target, prepared.pretrain)
    store = UserFeatureStore(spec, prepared.attributes, seq_len=config.tune.seq_len)
    scorer = ModelScorer(backbone, store, prompt_module)
    return evaluate(scorer, spec, target, ks=eval_cfg.ks, n_neg=eval_cfg.n_neg,
                    seed=config.seed if eval_cfg.seed is None else eval_cfg.seed,
                    fingerprint=config.fingerprint(), cold_start=eval_cfg.cold_start,
                    n_items=backbone.n_items)
