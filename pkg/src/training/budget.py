"""
Trainable-parameter accounting.
"""

from dataclasses import dataclass
from typing import Dict

from torch import nn


@dataclass(frozen=True)
class ParamBudget:
    trainable: int
    total: int

    @property
    def ratio(self) -> float:
        return self.trainable / self.total if self.total else 0.0

    def to_dict(self) -> Dict[str, float]:
        return {"trainable": self.trainable, "total": self.total, "ratio": self.ratio}


def param_budget(*modules: nn.Module) -> ParamBudget:
    """Census of scalars over the union of the modules' parameters"""
    seen = {}
    for module in modules:
        if module is None:
            continue
        for parameter in module.parameters():
            seen[id(parameter)] = parameter
    total = sum(p.numel() for p in seen.values())
    trainable = sum(p.numel() for p in seen.values() if p.requires_grad)
    return ParamBudget(trainable=trainable, total=total)


def set_trainable(module: nn.Module, trainable: bool) -> nn.Module:
    for parameter in module.parameters():
        parameter.requires_grad_(trainable)
    return module
