"""
Prompt Factorized Gate.

Attention-pools the M prompt-information rows of Q_u into N factors for every
prompted layer plus N shared factors, gates each layer's 2N factors into one
prompt vector p_l, and projects p_l to C prompt tokens of width d.
"""

from typing import List, Tuple

import torch
from torch import nn


def pfg_factors(Q: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """Q (..., M, r), scores (G, N, r) -> E (..., G*N, r), groups in order [layers..., shared]"""
    logits = torch.einsum("...mr,gnr->...gnm", Q, scores)
    attention = torch.softmax(logits, dim=-1)
    factors = torch.einsum("...gnm,...mr->...gnr", attention, Q)
    return factors.reshape(*factors.shape[:-3], -1, factors.shape[-1])


def layer_factors(E: torch.Tensor, layer: int, n_factors: int) -> torch.Tensor:
    """Layer-specific factors followed by the shared ones: (..., 2N, r)"""
    own = E[..., layer * n_factors:(layer + 1) * n_factors, :]
    shared = E[..., -n_factors:, :]
    return torch.cat([own, shared], dim=-2)


def pfg_prompt(layer: int, E: torch.Tensor, gate: torch.Tensor, projection: torch.Tensor,
               n_factors: int, n_tokens: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """gate (2N, 2N*r), projection (C*d, r) -> p_l (..., r), tokens (..., C, d)"""
    phi = layer_factors(E, layer, n_factors)
    beta = torch.softmax(phi.flatten(-2) @ gate.transpose(0, 1), dim=-1)
    prompt = torch.einsum("...j,...jr->...r", beta, phi)
    tokens = prompt @ projection.transpose(0, 1)
    return prompt, tokens.reshape(*tokens.shape[:-1], n_tokens, -1)


class PromptFactorizedGate(nn.Module):
    def __init__(self, n_layers: int, n_factors: int, n_tokens: int, width: int, d: int):
        super().__init__()
        self.n_layers, self.n_factors, self.n_tokens = n_layers, n_factors, n_tokens
        self.width, self.d = width, d
        self.factor_scores = nn.Parameter(torch.empty(n_layers + 1, n_factors, width))
        self.gates = nn.Parameter(torch.empty(n_layers, 2 * n_factors, 2 * n_factors * width))
        self.projections = nn.Parameter(torch.zeros(n_layers, n_tokens * d, width))
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator = None):
        with torch.no_grad():
            for weight in (self.factor_scores, self.gates):
                fan_in, fan_out = weight.shape[-1], weight.shape[-2]
                bound = (6.0 / (fan_in + fan_out)) ** 0.5
                weight.uniform_(-bound, bound, generator=generator)
            # zero projections: step-0 tokens are exactly zero
            self.projections.zero_()

    def forward(self, Q: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, List[torch.Tensor]]:
        """Q (..., M, r) -> (E, P (..., n_layers, r), per-layer tokens (..., C, d))"""
        E = pfg_factors(Q, self.factor_scores)
        prompts, tokens = [], []
        for layer in range(self.n_layers):
            p_l, t_l = pfg_prompt(layer, E, self.gates[layer], self.projections[layer],
                                  self.n_factors, self.n_tokens)
            prompts.append(p_l)
            tokens.append(t_l)
        return E, torch.stack(prompts, dim=-2), tokens
