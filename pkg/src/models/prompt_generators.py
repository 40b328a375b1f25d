"""
Personalized prompt-information generators.

Each generator maps one kind of user evidence to a ``width``-dim vector:
categorical attributes, standardized behavior statistics, and the user's
per-behavior item sequences through a shared-weight GRU.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from core.exceptions import EmbeddingIndexError, ShapeError

MISSING_ATTRIBUTE = -1


class TwoLayerMLP(nn.Module):
    """Linear -> GELU -> Linear"""

    def __init__(self, in_features: int, hidden: int, out_features: int):
        super().__init__()
        self.fc1 = nn.Linear(in_features, hidden)
        self.fc2 = nn.Linear(hidden, out_features)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class AttributePromptGenerator(nn.Module):
    """Embeds every categorical field, concatenates, then a two-layer MLP.

    Each field table has one extra row, the learned default token, used for
    missing values (``-1``). A dataset without attributes is modeled as one
    field of vocabulary 0 so every user maps to the default token.
    """

    def __init__(self, vocab_sizes: Sequence[int], width: int):
        super().__init__()
        self.vocab_sizes = list(vocab_sizes) or [0]
        self.tables = nn.ModuleList(nn.Embedding(size + 1, width) for size in self.vocab_sizes)
        self.mlp = TwoLayerMLP(len(self.vocab_sizes) * width, width, width)

    @property
    def n_fields(self) -> int:
        return len(self.vocab_sizes)

    def forward(self, attributes: torch.Tensor) -> torch.Tensor:
        if attributes.shape[-1] == 0:
            attributes = torch.full((*attributes.shape[:-1], self.n_fields), MISSING_ATTRIBUTE,
                                    dtype=torch.long, device=attributes.device)
        if attributes.shape[-1] != self.n_fields:
            raise ShapeError(f"expected {self.n_fields} attribute fields, got {attributes.shape[-1]}")
        embedded = []
        for field, (size, table) in enumerate(zip(self.vocab_sizes, self.tables)):
            column = attributes[..., field]
            bad = (column < MISSING_ATTRIBUTE) | (column >= size)
            if bool(bad.any()):
                raise EmbeddingIndexError(f"attribute_field_{field}", int(column[bad][0]), size)
            column = torch.where(column == MISSING_ATTRIBUTE, torch.full_like(column, size), column)
            embedded.append(table(column))
        return self.mlp(torch.cat(embedded, dim=-1))


class StatisticsPromptGenerator(nn.Module):
    """Standardizes the user statistics vector with corpus buffers, then a two-layer MLP"""

    def __init__(self, n_features: int, width: int):
        super().__init__()
        self.register_buffer("mean", torch.zeros(n_features))
        self.register_buffer("std", torch.ones(n_features))
        self.mlp = TwoLayerMLP(n_features, width, width)

    def set_standardizer(self, mean: np.ndarray, std: np.ndarray):
        self.mean.copy_(torch.as_tensor(mean, dtype=self.mean.dtype))
        self.std.copy_(torch.as_tensor(std, dtype=self.std.dtype))

    def forward(self, stats: torch.Tensor) -> torch.Tensor:
        return self.mlp((stats.to(self.mean.dtype) - self.mean) / self.std)


class GRUCell(nn.Module):
    """Gated recurrent unit step.

    r = σ(W_ir x + b_ir + W_hr h + b_hr)
    z = σ(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
    h' = (1 − z) ⊙ n + z ⊙ h
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.hidden_size = hidden_size
        self.input_map = nn.Linear(input_size, 3 * hidden_size)
        self.hidden_map = nn.Linear(hidden_size, 3 * hidden_size)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        xr, xz, xn = self.input_map(x).chunk(3, dim=-1)
        hr, hz, hn = self.hidden_map(h).chunk(3, dim=-1)
        reset = torch.sigmoid(xr + hr)
        update = torch.sigmoid(xz + hz)
        candidate = torch.tanh(xn + reset * hn)
        return (1 - update) * candidate + update * h


class BehaviorPromptGenerator(nn.Module):
    """One GRU, shared across behaviors, run over each behavior's subsequence"""

    def __init__(self, input_size: int, width: int, n_behaviors: int):
        super().__init__()
        self.n_behaviors = n_behaviors
        self.cell = GRUCell(input_size, width)

    def forward(self, inputs: torch.Tensor, behaviors: torch.Tensor,
                mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """inputs (batch, L, in), behaviors/mask (batch, L) -> (q_b (batch, width), empty flags (batch,))

        Steps whose behavior differs from the current one leave the state
        untouched, so the final state equals a GRU run on the subsequence.
        """
        batch, length, _ = inputs.shape
        hidden = inputs.new_zeros(self.n_behaviors, batch, self.cell.hidden_size)
        keep = torch.stack([mask & (behaviors == b) for b in range(self.n_behaviors)])
        for t in range(length):
            step = keep[:, :, t].unsqueeze(-1)
            if not bool(step.any()):
                continue
            updated = self.cell(inputs[:, t].expand(self.n_behaviors, -1, -1), hidden)
            hidden = torch.where(step, updated, hidden)
        present = keep.any(dim=-1)
        weights = present.to(inputs.dtype).unsqueeze(-1)
        counts = weights.sum(dim=0)
        q_b = (hidden * weights).sum(dim=0) / counts.clamp_min(1.0)
        return q_b, ~present.any(dim=0)


def stack_prompt_info(vectors: Sequence[Optional[torch.Tensor]]) -> torch.Tensor:
    """Stack info vectors (batch, width) into Q_u (batch, M, width)"""
    return torch.stack([v for v in vectors if v is not None], dim=-2)
