"""
Behavior-aware sequence embedding: e = e_item + e_position + e_behavior.

Sequences are left-padded: the most recent event always sits in the last
slot, padded slots are masked and carry exactly zero rows.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import torch
from torch import nn

from core.exceptions import EmbeddingIndexError

PAD = 0
# behavior id of prompt rows; they take part in every behavior view
PROMPT_BEHAVIOR = -1


@dataclass
class SequenceMatrix:
    """Values (..., L, d), mask (..., L) bool and behavior ids (..., L)"""

    values: torch.Tensor
    mask: torch.Tensor
    behavior_ids: torch.Tensor

    @property
    def length(self) -> int:
        return self.values.shape[-2]

    def masked(self) -> "SequenceMatrix":
        return replace(self, values=self.values * self.mask.unsqueeze(-1).to(self.values.dtype))


class EmbeddingTables(nn.Module):
    """Item, position and behavior tables, Xavier-initialized"""

    def __init__(self, n_items: int, max_len: int, n_behaviors: int, d: int):
        super().__init__()
        self.n_items, self.max_len, self.n_behaviors, self.d = n_items, max_len, n_behaviors, d
        self.item_table = nn.Parameter(torch.empty(n_items, d))
        self.position_table = nn.Parameter(torch.empty(max_len, d))
        self.behavior_table = nn.Parameter(torch.empty(n_behaviors, d))
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        for table in (self.item_table, self.position_table, self.behavior_table):
            bound = (6.0 / sum(table.shape)) ** 0.5
            with torch.no_grad():
                table.uniform_(-bound, bound, generator=generator)

    def _check(self, name: str, index: torch.Tensor, mask: torch.Tensor, size: int):
        valid = index[mask]
        if valid.numel() == 0:
            return
        low, high = int(valid.min()), int(valid.max())
        if low < 0:
            raise EmbeddingIndexError(name, low, size)
        if high >= size:
            raise EmbeddingIndexError(name, high, size)

    def forward(self, items: torch.Tensor, positions: torch.Tensor, behaviors: torch.Tensor,
                mask: torch.Tensor) -> SequenceMatrix:
        """Gather and sum the three tables; padded slots become zero rows"""
        self._check("item_table", items, mask, self.n_items)
        self._check("position_table", positions, mask, self.max_len)
        self._check("behavior_table", behaviors, mask, self.n_behaviors)
        safe = lambda index: torch.where(mask, index, torch.zeros_like(index))
        values = (
            self.item_table[safe(items)]
            + self.position_table[safe(positions)]
            + self.behavior_table[safe(behaviors)]
        )
        values = values * mask.unsqueeze(-1).to(values.dtype)
        return SequenceMatrix(values=values, mask=mask, behavior_ids=torch.where(mask, behaviors, torch.zeros_like(behaviors)))


def pad_triples(triples: Sequence[Tuple[int, int, int]], seq_len: int) -> Tuple[torch.Tensor, ...]:
    """Left-pad (item, position, behavior) triples to ``seq_len``, keeping the most recent"""
    triples = list(triples)[-seq_len:] if seq_len > 0 else []
    offset = seq_len - len(triples)
    items = torch.zeros(seq_len, dtype=torch.long)
    positions = torch.zeros(seq_len, dtype=torch.long)
    behaviors = torch.zeros(seq_len, dtype=torch.long)
    mask = torch.zeros(seq_len, dtype=torch.bool)
    for slot, (item, position, behavior) in enumerate(triples, start=offset):
        items[slot], positions[slot], behaviors[slot] = item, position, behavior
        mask[slot] = True
    return items, positions, behaviors, mask


def slot_triples(history: Sequence[Tuple[int, int]], seq_len: int) -> List[Tuple[int, int, int]]:
    """(item, behavior) pairs -> triples whose position is their slot in a left-padded window"""
    history = list(history)[-seq_len:]
    offset = seq_len - len(history)
    return [(item, offset + i, behavior) for i, (item, behavior) in enumerate(history)]


def embed_sequence(triples: Sequence[Tuple[int, int, int]], tables: EmbeddingTables,
                   seq_len: Optional[int] = None) -> SequenceMatrix:
    seq_len = tables.max_len if seq_len is None else seq_len
    items, positions, behaviors, mask = pad_triples(triples, seq_len)
    return tables(items, positions, behaviors, mask)


def behavior_views(seq: SequenceMatrix, n_behaviors: int) -> List[SequenceMatrix]:
    """One view per behavior keeping only that behavior's rows (prompt rows join every view)"""
    views = []
    for behavior in range(n_behaviors):
        keep = seq.mask & ((seq.behavior_ids == behavior) | (seq.behavior_ids == PROMPT_BEHAVIOR))
        views.append(SequenceMatrix(
            values=seq.values * keep.unsqueeze(-1).to(seq.values.dtype),
            mask=keep,
            behavior_ids=seq.behavior_ids,
        ))
    return views


def inject_prompts(seq: SequenceMatrix, tokens: Optional[torch.Tensor]) -> SequenceMatrix:
    """Prepend C prompt rows (..., C, d) as valid tokens; C = 0 or None is the identity"""
    if tokens is None or tokens.shape[-2] == 0:
        return seq
    lead = seq.values.shape[:-2]
    n_tokens = tokens.shape[-2]
    tokens = tokens.expand(*lead, n_tokens, seq.values.shape[-1])
    prompt_mask = torch.ones(*lead, n_tokens, dtype=torch.bool, device=seq.mask.device)
    prompt_ids = torch.full((*lead, n_tokens), PROMPT_BEHAVIOR, dtype=seq.behavior_ids.dtype,
                            device=seq.behavior_ids.device)
    return SequenceMatrix(
        values=torch.cat([tokens.to(seq.values.dtype), seq.values], dim=-2),
        mask=torch.cat([prompt_mask, seq.mask], dim=-1),
        behavior_ids=torch.cat([prompt_ids, seq.behavior_ids], dim=-1),
    )


def strip_prompts(seq: SequenceMatrix, n_tokens: int) -> SequenceMatrix:
    if n_tokens == 0:
        return seq
    return SequenceMatrix(
        values=seq.values[..., n_tokens:, :],
        mask=seq.mask[..., n_tokens:],
        behavior_ids=seq.behavior_ids[..., n_tokens:],
    )
