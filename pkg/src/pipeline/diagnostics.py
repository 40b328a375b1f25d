"""
Finite-difference gradient checks of every trainable path at small scale.

All checks run in double precision on ``small_config`` dimensions so the full
table finishes in well under a minute on one CPU thread.
"""

from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger

from core.config import RunConfig, small_config
from interactions import UserStatistics
from models.coding_rate import coding_rate
from models.model_manager import ModelManager
from models.prompt_learner import PromptFeatures
from numerics.gradcheck import grad_check
from training.batching import collate_histories
from training.losses import pretrain_loss, tune_loss

H = 1e-5
THRESHOLD = 1e-4


def _toy_histories(rng: np.random.Generator, n_users: int, length: int, n_items: int,
                   n_behaviors: int) -> List[np.ndarray]:
    histories = []
    for user in range(n_users):
        n = length - user % 3
        histories.append(np.stack([rng.integers(0, n_items, n), rng.integers(0, n_behaviors, n)], axis=1))
    return histories


def _perturbed(module: torch.nn.Module, generator: torch.Generator, std: float = 0.1) -> None:
    """Moves zero-initialized parameters off zero so every path carries gradient"""
    with torch.no_grad():
        for param in module.parameters():
            if not bool(param.abs().sum()):
                param.normal_(0.0, std, generator=generator)


def _rows(target: str, f: Callable[[], torch.Tensor], params: Dict[str, torch.Tensor],
          max_coords: Optional[int], seed: int) -> List[Dict]:
    report = grad_check(f, params, h=H, threshold=THRESHOLD, max_coords=max_coords, seed=seed)
    frame = report.to_frame()
    frame.insert(0, "target", target)
    logger.info(f"gradcheck {target}: max relative error {report.max_rel_error:.2e}, "
                f"{'passed' if report.passed else 'FAILED'}")
    return frame.to_dict("records")


def gradient_check_table(seed: int = 0, config: Optional[RunConfig] = None,
                         max_coords: Optional[int] = 24) -> pd.DataFrame:
    """One row per (target, parameter) with the worst relative error found"""
    config = config or small_config()
    generator = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    synth, model_cfg, prompt = config.synth, config.model, config.prompt
    n_items, n_behaviors, batch = synth.n_items, synth.n_behaviors, 3

    manager = ModelManager(config, dtype=torch.float64)
    backbone = manager.build_backbone(n_items, n_behaviors, generator)
    n_statistics = UserStatistics.vector_size(n_behaviors)
    vocab = [synth.attribute_vocab] * synth.n_attribute_fields
    prompt_module = manager.build_prompt_module(backbone, vocab, n_statistics, generator)
    _perturbed(prompt_module, generator)

    sequence = collate_histories(_toy_histories(rng, batch, model_cfg.max_len, n_items, n_behaviors),
                                 model_cfg.max_len)
    features = PromptFeatures(
        attributes=torch.from_numpy(rng.integers(0, synth.attribute_vocab, (batch, synth.n_attribute_fields))),
        statistics=torch.randn(batch, n_statistics, generator=generator, dtype=torch.float64),
        items=sequence.items, behaviors=sequence.behaviors, mask=sequence.mask,
    )
    positives = torch.from_numpy(rng.integers(0, n_items, batch))
    negatives = (positives + 1) % n_items
    behavior_pos = torch.from_numpy(rng.integers(0, n_behaviors, batch))
    behavior_neg = (behavior_pos + 1) % n_behaviors
    rows = []

    # loss alone, on free vectors
    free = {name: torch.randn(batch, model_cfg.d, generator=generator, dtype=torch.float64).requires_grad_()
            for name in ("u", "e_p", "e_n", "b_p", "b_n")}
    rows += _rows("pretrain_loss", lambda: pretrain_loss(**free), free, None, seed)

    # backbone encoder end to end
    def backbone_objective():
        users = backbone(*sequence.tensors())
        tables = backbone.tables
        return pretrain_loss(users, tables.item_table[positives], tables.item_table[negatives],
                             tables.behavior_table[behavior_pos], tables.behavior_table[behavior_neg])

    rows += _rows("encode_user", backbone_objective, dict(backbone.named_parameters()), max_coords, seed)

    # coding rate on a free matrix
    M = torch.randn(prompt.n_factors * 3, prompt.prompt_dim, generator=generator,
                    dtype=torch.float64).requires_grad_()
    rows += _rows("coding_rate", lambda: coding_rate(M, prompt.n_factors, prompt.eps_e2), {"M": M}, None, seed)

    # prompt path through the frozen backbone with the regularizer on
    def tune_objective():
        output = prompt_module(features, backbone.tables)
        users = backbone(*sequence.tensors(), prompts=output.tokens)
        table = backbone.tables.item_table
        return tune_loss(users, table[positives], table[negatives], output.factors, output.prompts,
                         lambda_=config.tune.effective_lambda, n_factors=prompt.n_factors,
                         lambda_e=prompt.lambda_e, lambda_p=prompt.lambda_p, eps_e2=prompt.eps_e2,
                         eps_p2=prompt.eps_p2, sign=prompt.compactness_sign)

    rows += _rows("tune_loss", tune_objective, dict(prompt_module.named_parameters()), max_coords, seed)
    return pd.DataFrame(rows)
