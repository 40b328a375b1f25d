"""
Efficient Behavior Miner backbone.

Each layer filters every behavior view and the overall sequence with its own
filter, mixes the |B|+1 filtered matrices position-wise, then applies
add & norm, a GELU feed-forward block and a second add & norm. Padded rows are
zero on entry and exit of every layer.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
from torch import nn

from core.exceptions import EncodeError, ShapeError
from .embedding import (
    EmbeddingTables, SequenceMatrix, behavior_views, inject_prompts, pad_triples, strip_prompts,
)
from .filter_layer import build_filter

FILTER_MODES = ("efl", "identity", "attention")
READOUTS = ("last", "mean")


class BehaviorMinerLayer(nn.Module):
    """One EBM block"""

    def __init__(self, d: int, k: int, n_behaviors: int, d_ff: Optional[int] = None,
                 filter_mode: str = "efl", full_fft: bool = False):
        super().__init__()
        self.d, self.n_behaviors = d, n_behaviors
        # off: every filter acts as the identity; weights stay in the state dict
        self.denoise = True
        self.view_filters = nn.ModuleList(
            build_filter(filter_mode, d, k, full_fft) for _ in range(n_behaviors)
        )
        self.overall_filter = build_filter(filter_mode, d, k, full_fft)
        self.mixer = nn.Linear((n_behaviors + 1) * d, d)
        self.norm1 = nn.LayerNorm(d)
        self.ffn_in = nn.Linear(d, d_ff or 2 * d)
        self.ffn_out = nn.Linear(d_ff or 2 * d, d)
        self.activation = nn.GELU()
        self.norm2 = nn.LayerNorm(d)

    def filtered(self, seq: SequenceMatrix) -> List[torch.Tensor]:
        """Filtered behavior views followed by the filtered overall sequence"""
        views = behavior_views(seq, self.n_behaviors)
        if not self.denoise:
            return [view.values * view.mask.unsqueeze(-1).to(view.values.dtype) for view in views] + [
                seq.values * seq.mask.unsqueeze(-1).to(seq.values.dtype)
            ]
        out = [f(view.values, view.mask) for f, view in zip(self.view_filters, views)]
        out.append(self.overall_filter(seq.values, seq.mask))
        return out

    def forward(self, seq: SequenceMatrix) -> SequenceMatrix:
        if seq.values.shape[-1] != self.d:
            raise ShapeError(f"hidden width {seq.values.shape[-1]} != d={self.d}")
        keep = seq.mask.unsqueeze(-1).to(seq.values.dtype)
        hidden = seq.values * keep
        mixed = self.mixer(torch.cat(self.filtered(seq.masked()), dim=-1))
        hidden = self.norm1(hidden + mixed)
        hidden = self.norm2(hidden + self.ffn_out(self.activation(self.ffn_in(hidden))))
        return SequenceMatrix(values=hidden * keep, mask=seq.mask, behavior_ids=seq.behavior_ids)


class BehaviorMiner(nn.Module):
    """Embedding tables plus a stack of EBM layers; encodes users into d-vectors"""

    def __init__(self, n_items: int, n_behaviors: int, d: int = 64, n_layers: int = 2,
                 k: int = 4, max_len: int = 64, d_ff: Optional[int] = None,
                 filter_mode: str = "efl", full_fft: bool = False, readout: str = "last"):
        super().__init__()
        if filter_mode not in FILTER_MODES:
            raise ShapeError(f"unknown filter mode '{filter_mode}'")
        if readout not in READOUTS:
            raise ShapeError(f"unknown readout '{readout}'")
        self.n_items, self.n_behaviors, self.d = n_items, n_behaviors, d
        self.n_layers, self.k, self.max_len = n_layers, k, max_len
        self.d_ff = d_ff or 2 * d
        self.filter_mode, self.full_fft, self.readout = filter_mode, full_fft, readout
        self.tables = EmbeddingTables(n_items, max_len, n_behaviors, d)
        self.layers = nn.ModuleList(
            BehaviorMinerLayer(d, k, n_behaviors, self.d_ff, filter_mode, full_fft)
            for _ in range(n_layers)
        )

    def header(self) -> Dict[str, Any]:
        """Dimensions that must agree for a checkpoint to load"""
        return {
            "n_items": self.n_items,
            "n_behaviors": self.n_behaviors,
            "d": self.d,
            "n_layers": self.n_layers,
            "k": self.k,
            "max_len": self.max_len,
            "d_ff": self.d_ff,
            "filter_mode": self.filter_mode,
            "full_fft": self.full_fft,
            "readout": self.readout,
        }

    @property
    def denoising(self) -> bool:
        return all(layer.denoise for layer in self.layers)

    def set_denoising(self, enabled: bool) -> "BehaviorMiner":
        """Toggle the filters of every layer without touching their weights"""
        for layer in self.layers:
            layer.denoise = bool(enabled)
        return self

    def hidden_states(self, items: torch.Tensor, positions: torch.Tensor, behaviors: torch.Tensor,
                      mask: torch.Tensor,
                      prompts: Optional[Sequence[Optional[torch.Tensor]]] = None) -> SequenceMatrix:
        """Final-layer hidden states; ``prompts[l]`` (..., C, d) is prepended before layer l and stripped after"""
        seq = self.tables(items, positions, behaviors, mask)
        for index, layer in enumerate(self.layers):
            tokens = prompts[index] if prompts is not None and index < len(prompts) else None
            n_tokens = 0 if tokens is None else tokens.shape[-2]
            seq = strip_prompts(layer(inject_prompts(seq, tokens)), n_tokens)
        return seq

    def forward(self, items: torch.Tensor, positions: torch.Tensor, behaviors: torch.Tensor,
                mask: torch.Tensor,
                prompts: Optional[Sequence[Optional[torch.Tensor]]] = None) -> torch.Tensor:
        empty = ~mask.any(dim=-1)
        if bool(empty.any()):
            raise EncodeError(f"cannot encode {int(empty.sum())} empty sequence(s)")
        seq = self.hidden_states(items, positions, behaviors, mask, prompts)
        if self.readout == "mean":
            keep = seq.mask.unsqueeze(-1).to(seq.values.dtype)
            return (seq.values * keep).sum(dim=-2) / keep.sum(dim=-2)
        # left-padded, so the most recent event is always the last slot
        return seq.values[..., -1, :]

    def score_items(self, users: torch.Tensor, items: torch.Tensor) -> torch.Tensor:
        """u^T e_v for users (..., d) and item ids (..., n)"""
        return torch.einsum("...d,...nd->...n", users, self.tables.item_table[items])


def encode_user(triples: Sequence[Tuple[int, int, int]], model: BehaviorMiner,
                prompts: Optional[Sequence[Optional[torch.Tensor]]] = None,
                seq_len: Optional[int] = None) -> torch.Tensor:
    """Encode one user's (item, position, behavior) triples into a d-vector"""
    if len(triples) == 0:
        raise EncodeError("cannot encode an empty sequence")
    items, positions, behaviors, mask = pad_triples(triples, seq_len or model.max_len)
    batched = None if prompts is None else [
        None if tokens is None else tokens.unsqueeze(0) for tokens in prompts
    ]
    return model(items[None], positions[None], behaviors[None], mask[None], batched)[0]


def backbone_parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
