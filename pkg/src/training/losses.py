"""
Ranking objectives in softplus form: -log σ(x) = softplus(-x).
"""

from typing import Optional

import torch
import torch.nn.functional as F

from models.coding_rate import PROMOTE_DIVERSITY, compactness_loss


def _dot(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a * b).sum(dim=-1)


def pretrain_loss(u: torch.Tensor, e_p: torch.Tensor, e_n: torch.Tensor,
                  b_p: torch.Tensor, b_n: torch.Tensor) -> torch.Tensor:
    """Mean over examples of -log σ(u·e_p - u·e_n) - log σ(u·b_p - u·b_n)"""
    item_margin = _dot(u, e_p) - _dot(u, e_n)
    behavior_margin = _dot(u, b_p) - _dot(u, b_n)
    return (F.softplus(-item_margin) + F.softplus(-behavior_margin)).mean()


def prediction_loss(u: torch.Tensor, e_p: torch.Tensor, e_n: torch.Tensor) -> torch.Tensor:
    return F.softplus(-(_dot(u, e_p) - _dot(u, e_n))).mean()


def tune_loss(u: torch.Tensor, e_p: torch.Tensor, e_n: torch.Tensor,
              factors: Optional[torch.Tensor] = None, prompts: Optional[torch.Tensor] = None,
              lambda_: float = 0.0, n_factors: int = 1, lambda_e: float = 1.0, lambda_p: float = 1.0,
              eps_e2: float = 1.0, eps_p2: float = 1.0, sign: str = PROMOTE_DIVERSITY) -> torch.Tensor:
    """L_pred + λ · signed compactness term; banks are skipped when λ = 0 or absent"""
    loss = prediction_loss(u, e_p, e_n)
    if lambda_ == 0 or factors is None or prompts is None:
        return loss
    term = compactness_loss(factors, prompts, n_factors=n_factors, n_layers=prompts.shape[-2],
                            lambda_e=lambda_e, lambda_p=lambda_p, eps_e2=eps_e2, eps_p2=eps_p2,
                            sign=sign)
    return loss + lambda_ * term
