"""
Customized prompt learner: generators -> Q_u -> factorized gate -> per-layer tokens.

``StaticPromptBank`` is the ablation that swaps generated prompts for free
token parameters shared by all users.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
from torch import nn

from .embedding import EmbeddingTables
from .prompt_gate import PromptFactorizedGate
from .prompt_generators import (
    AttributePromptGenerator, BehaviorPromptGenerator, StatisticsPromptGenerator, stack_prompt_info,
)


@dataclass
class PromptFeatures:
    """Per-user inputs of the prompt path, batched on the first axis"""

    attributes: torch.Tensor
    statistics: torch.Tensor
    items: torch.Tensor
    behaviors: torch.Tensor
    mask: torch.Tensor

    def __len__(self) -> int:
        return self.items.shape[0]


@dataclass
class PromptOutput:
    tokens: List[Optional[torch.Tensor]]
    factors: Optional[torch.Tensor] = None
    prompts: Optional[torch.Tensor] = None
    empty_behavior: Optional[torch.Tensor] = None

    @property
    def has_banks(self) -> bool:
        return self.factors is not None and self.prompts is not None


def _spread(tokens: Sequence[torch.Tensor], n_layers: int) -> List[Optional[torch.Tensor]]:
    return list(tokens) + [None] * (n_layers - len(tokens))


class CustomizedPromptLearner(nn.Module):
    def __init__(self, n_layers: int, d: int, width: int, n_factors: int, n_tokens: int,
                 n_behaviors: int, attribute_vocab: Sequence[int], n_statistics: int,
                 first_layer_only: bool = False):
        super().__init__()
        self.n_layers, self.d, self.width = n_layers, d, width
        self.n_factors, self.n_tokens = n_factors, n_tokens
        self.n_prompt_layers = 1 if first_layer_only else n_layers
        self.attribute_generator = AttributePromptGenerator(attribute_vocab, width)
        self.statistics_generator = StatisticsPromptGenerator(n_statistics, width)
        self.behavior_generator = BehaviorPromptGenerator(d, width, n_behaviors)
        self.gate = PromptFactorizedGate(self.n_prompt_layers, n_factors, n_tokens, width, d)
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, (nn.Linear, nn.Embedding)):
                    fan_out, fan_in = module.weight.shape
                    bound = (6.0 / (fan_in + fan_out)) ** 0.5
                    module.weight.uniform_(-bound, bound, generator=generator)
                if isinstance(module, nn.Linear) and module.bias is not None:
                    module.bias.zero_()
        self.gate.reset_parameters(generator)

    def prompt_info(self, features: PromptFeatures, tables: EmbeddingTables):
        """Q_u (batch, 3, width) stacked as [attributes, statistics, behaviors]"""
        safe = lambda index: torch.where(features.mask, index, torch.zeros_like(index))
        inputs = tables.item_table[safe(features.items)] + tables.behavior_table[safe(features.behaviors)]
        q_attr = self.attribute_generator(features.attributes)
        q_statis = self.statistics_generator(features.statistics)
        q_b, empty = self.behavior_generator(inputs, features.behaviors, features.mask)
        return stack_prompt_info([q_attr, q_statis.to(q_attr.dtype), q_b.to(q_attr.dtype)]), empty

    def forward(self, features: PromptFeatures, tables: EmbeddingTables) -> PromptOutput:
        Q, empty = self.prompt_info(features, tables)
        E, P, tokens = self.gate(Q)
        return PromptOutput(tokens=_spread(tokens, self.n_layers), factors=E, prompts=P,
                            empty_behavior=empty)


class StaticPromptBank(nn.Module):
    """Free prompt tokens (n_prompt_layers, C, d) shared across users"""

    def __init__(self, n_layers: int, d: int, n_tokens: int, first_layer_only: bool = False,
                 init_std: float = 0.01):
        super().__init__()
        self.n_layers, self.n_tokens, self.init_std = n_layers, n_tokens, init_std
        self.n_prompt_layers = 1 if first_layer_only else n_layers
        self.tokens = nn.Parameter(torch.empty(self.n_prompt_layers, n_tokens, d))
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        with torch.no_grad():
            self.tokens.normal_(0.0, self.init_std, generator=generator)

    def forward(self, features: PromptFeatures, tables: EmbeddingTables = None) -> PromptOutput:
        batch = len(features)
        tokens = [t.unsqueeze(0).expand(batch, -1, -1) for t in self.tokens]
        return PromptOutput(tokens=_spread(tokens, self.n_layers))
