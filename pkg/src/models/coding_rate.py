"""
Coding-rate regularizer: R(M) = ½ logdet(I + width / (denom · ε²) · M Mᵀ).
"""

import torch

from core.exceptions import NumericError

PROMOTE_DIVERSITY = "promote_diversity"
LITERAL = "literal"
COMPACTNESS_SIGNS = (PROMOTE_DIVERSITY, LITERAL)


def coding_rate(M: torch.Tensor, denom: int, eps2: float) -> torch.Tensor:
    """Batched over leading dims; Cholesky-based log-determinant, natural log"""
    if eps2 <= 0:
        raise NumericError(f"eps2 must be positive, got {eps2}")
    if not bool(torch.isfinite(M).all()):
        raise NumericError("coding rate input contains non-finite values")
    m, width = M.shape[-2], M.shape[-1]
    coefficient = width / (denom * eps2)
    eye = torch.eye(m, dtype=M.dtype, device=M.device)
    gram = eye + coefficient * (M @ M.transpose(-1, -2))
    factor, info = torch.linalg.cholesky_ex(gram)
    if bool((info != 0).any()):
        raise NumericError("Cholesky factorization failed in coding rate")
    return torch.log(torch.diagonal(factor, dim1=-2, dim2=-1)).sum(dim=-1)


def compactness_loss(E: torch.Tensor, P: torch.Tensor, n_factors: int, n_layers: int,
                     lambda_e: float = 1.0, lambda_p: float = 1.0, eps_e2: float = 1.0,
                     eps_p2: float = 1.0, sign: str = PROMOTE_DIVERSITY) -> torch.Tensor:
    """Per-user λ_e R(E) + λ_p R(P), averaged over the batch, with the configured sign.

    ``promote_diversity`` returns the negated rate so minimizing the total loss
    spreads the factor and prompt rows apart; ``literal`` returns it unchanged.
    """
    if sign not in COMPACTNESS_SIGNS:
        raise ValueError(f"unknown compactness sign '{sign}'")
    rate = E.new_zeros(E.shape[:-2])
    if lambda_e:
        rate = rate + lambda_e * coding_rate(E, n_factors, eps_e2)
    if lambda_p:
        rate = rate + lambda_p * coding_rate(P, n_layers, eps_p2)
    term = rate.mean()
    return -term if sign == PROMOTE_DIVERSITY else term
