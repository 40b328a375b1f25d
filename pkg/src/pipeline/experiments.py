"""
Seed-paired ablation experiments on synthetic corpora.

For every seed a corpus is generated, a backbone pretrained and prompts tuned
for the full model and for each ablation variant. Variants are compared to the
full model by a one-sided paired t-test over seeds.
"""

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import stats

from core.config import RunConfig
from interactions import InteractionLog, generate_synthetic_corpus
from models.behavior_miner import BehaviorMiner
from training.batching import UserFeatureStore, evaluation_cases
from training.tuner import TuningResult
from .exports import collect_prompts, mean_pairwise_cosine
from .stages import PreparedData, prepare_data, pretrain_stage, tune_stage

FULL = "full"
# tune flag -> alternative hypothesis for full vs variant
VARIANTS = {
    "no_denoise": "greater",
    "static_prompt": "greater",
    "first_layer_only": "greater",
    "no_compactness": "greater",
}


@dataclass
class SeedOutcome:
    seed: int
    hr: Dict[str, float] = field(default_factory=dict)
    ndcg: Dict[str, float] = field(default_factory=dict)
    cosine: Dict[str, float] = field(default_factory=dict)


def variant_config(base: RunConfig, seed: int, variant: str) -> RunConfig:
    data = base.model_dump(by_alias=True)
    data["seed"] = seed
    data["synth"]["seed"] = seed
    for name in VARIANTS:
        data["tune"][name] = name == variant
    # the no-denoise variant is pretrained without filters as well
    learned = base.model.filter_mode if base.model.filter_mode != "identity" else "efl"
    data["model"]["filter_mode"] = "identity" if variant == "no_denoise" else learned
    return RunConfig.model_validate(data)


def prompt_cosine(result: TuningResult, prepared: PreparedData, config: RunConfig) -> float:
    """Mean pairwise cosine among the rows of P over eval users (nan without banks)"""
    store = UserFeatureStore(prepared.spec, prepared.attributes, seq_len=config.tune.seq_len)
    frames = collect_prompts(result.prompt_module, result.backbone, store, evaluation_cases(prepared.spec))
    if "prompts" not in frames:
        return float("nan")
    frame = frames["prompts"].sort_values(["user", "layer"])
    n_layers = frame["layer"].nunique()
    values = frame[[c for c in frame.columns if c.startswith("v")]].to_numpy()
    return mean_pairwise_cosine(values.reshape(-1, n_layers, values.shape[1]))


def run_seed(base: RunConfig, seed: int, variants: Sequence[str],
             data: Optional[Tuple[InteractionLog, np.ndarray]] = None) -> SeedOutcome:
    """Tune every variant on one seed; a fresh synthetic corpus is drawn unless ``data`` is given"""
    outcome = SeedOutcome(seed=seed)
    config = variant_config(base, seed, FULL)
    if data is None:
        corpus = generate_synthetic_corpus(config.synth)
        data = (corpus.log, corpus.attributes)
    prepared = prepare_data(data[0], data[1], config)
    backbone = pretrain_stage(prepared, config).model
    pristine = copy.deepcopy(backbone.state_dict())

    for variant in [FULL, *variants]:
        config = variant_config(base, seed, variant)
        if variant == "no_denoise":
            model = pretrain_stage(prepared, config).model
        else:
            backbone.load_state_dict(pristine)
            model = backbone
        result = tune_stage(prepared, model, config)
        outcome.hr[variant] = result.report.hr(10) if 10 in result.report.ks else result.report.hr(result.report.ks[0])
        outcome.ndcg[variant] = result.report.validation_score()
        outcome.cosine[variant] = prompt_cosine(result, prepared, config)
        logger.info(f"seed {seed} {variant}: HR={outcome.hr[variant]:.4f} cosine={outcome.cosine[variant]:.4f}")
    return outcome


def paired_test(full: Sequence[float], variant: Sequence[float], alternative: str = "greater",
                alpha: float = 0.05) -> Dict[str, float]:
    """One-sided paired t-test of full against variant over seeds"""
    full, variant = np.asarray(full, dtype=float), np.asarray(variant, dtype=float)
    diff = full - variant
    if len(diff) < 2:
        statistic, p_value = float("nan"), 1.0
    elif np.allclose(diff, diff[0]):
        # zero spread: the t statistic is undefined, the constant difference decides
        statistic = float("nan")
        wins = diff[0] > 0 if alternative == "greater" else diff[0] < 0
        p_value = 0.0 if wins else 1.0
    else:
        statistic, p_value = stats.ttest_rel(full, variant, alternative=alternative)
    return {
        "mean_full": float(full.mean()) if len(full) else float("nan"),
        "mean_variant": float(variant.mean()) if len(variant) else float("nan"),
        "t": float(statistic),
        "p_value": float(p_value),
        "significant": bool(p_value < alpha),
    }


def summarize(outcomes: List[SeedOutcome], variants: Sequence[str], alpha: float) -> pd.DataFrame:
    rows = []
    full_hr = [o.hr[FULL] for o in outcomes]
    for variant in variants:
        test = paired_test(full_hr, [o.hr[variant] for o in outcomes], VARIANTS[variant], alpha)
        rows.append({"comparison": f"{FULL} vs {variant}", "metric": "HR", **test})
    if "no_compactness" in variants:
        # diversity: lower cosine among prompts with the regularizer on
        test = paired_test([o.cosine[FULL] for o in outcomes],
                           [o.cosine["no_compactness"] for o in outcomes], "less", alpha)
        rows.append({"comparison": f"{FULL} vs no_compactness", "metric": "prompt_cosine", **test})
    return pd.DataFrame(rows)


def run_ablation(base: RunConfig, seeds: Optional[Sequence[int]] = None,
                 variants: Optional[Sequence[str]] = None,
                 data: Optional[Tuple[InteractionLog, np.ndarray]] = None) -> Dict[str, pd.DataFrame]:
    seeds = list(seeds or base.experiments.seeds)
    variants = list(variants or base.experiments.variants)
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ValueError(f"unknown ablation variants: {sorted(unknown)}")
    outcomes = [run_seed(base, seed, variants, data) for seed in seeds]
    per_seed = pd.DataFrame([
        {"seed": o.seed, "variant": v, "HR": o.hr[v], "NDCG_sum": o.ndcg[v], "prompt_cosine": o.cosine[v]}
        for o in outcomes for v in [FULL, *variants]
    ])
    return {"per_seed": per_seed, "summary": summarize(outcomes, variants, base.experiments.alpha)}


def efficiency_comparison(prepared: PreparedData, backbone: BehaviorMiner, config: RunConfig,
                          epochs: int = 2) -> pd.DataFrame:
    """Trainable share and seconds per epoch of prompt tuning vs full fine-tuning on the same data"""
    rows = []
    for full_finetune in (False, True):
        data = config.model_dump(by_alias=True)
        data["tune"].update({"full_finetune": full_finetune, "max_epochs": epochs, "patience": epochs})
        run_config = RunConfig.model_validate(data)
        result = tune_stage(prepared, copy.deepcopy(backbone), run_config)
        rows.append({
            "mode": "full_finetune" if full_finetune else "prompt_tuning",
            "trainable": result.budget.trainable,
            "total": result.budget.total,
            "ratio": result.budget.ratio,
            "seconds_per_epoch": result.seconds_per_epoch,
            "backbone_unchanged": result.backbone_unchanged,
        })
    frame = pd.DataFrame(rows)
    frame["time_vs_prompt"] = frame["seconds_per_epoch"] / frame.loc[0, "seconds_per_epoch"]
    return frame
