"""
Finite-difference gradient checking.

Central differences (f(θ+h) - f(θ-h)) / 2h are compared with an analytic
gradient (autograd unless one is supplied) coordinate by coordinate, using
the relative error |g_a - g_fd| / max(1, |g_a|, |g_fd|).
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from loguru import logger

from core.exceptions import NumericError


@dataclass
class ParameterCheck:
    name: str
    n_checked: int
    max_rel_error: float
    worst_index: Tuple[int, ...]
    failing: List[Tuple[int, ...]] = field(default_factory=list)

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold


@dataclass
class GradCheckReport:
    rows: List[ParameterCheck]
    threshold: float
    step: float

    @property
    def passed(self) -> bool:
        return all(row.passed(self.threshold) for row in self.rows)

    @property
    def max_rel_error(self) -> float:
        return max((row.max_rel_error for row in self.rows), default=0.0)

    def failing_coordinates(self) -> List[Tuple[str, Tuple[int, ...]]]:
        return [(row.name, index) for row in self.rows for index in row.failing]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {
                "parameter": row.name,
                "checked": row.n_checked,
                "max_rel_error": row.max_rel_error,
                "worst_index": "x".join(map(str, row.worst_index)),
                "passed": row.passed(self.threshold),
            }
            for row in self.rows
        ])


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def autograd_gradients(f: Callable[[], torch.Tensor],
                       params: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    tensors = list(params.values())
    with torch.enable_grad():
        value = f()
        grads = torch.autograd.grad(value, tensors, allow_unused=True)
    return {
        name: (g.detach().clone() if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }


def _evaluate(f: Callable[[], torch.Tensor], coordinate: str) -> float:
    with torch.no_grad():
        value = float(f())
    if not np.isfinite(value):
        raise NumericError(f"objective is not finite ({value}) at {coordinate}", coordinate=coordinate)
    return value


def grad_check(f: Callable[[], torch.Tensor], params: Mapping[str, torch.Tensor], h: float = 1e-5,
               threshold: float = 1e-4, analytic: Optional[Mapping[str, torch.Tensor]] = None,
               max_coords: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Check the gradient of the scalar ``f()`` with respect to each tensor in ``params``.

    ``f`` must read the tensors in ``params`` (they are perturbed in place).
    ``max_coords`` limits the number of randomly chosen coordinates checked per tensor.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    _evaluate(f, "base point")
    gradients = dict(analytic) if analytic is not None else autograd_gradients(f, params)
    rng = np.random.default_rng(seed)

    rows = []
    for name, tensor in params.items():
        grad = gradients[name].reshape(-1)
        flat = tensor.data.view(-1)
        coords = np.arange(flat.numel())
        if max_coords is not None and flat.numel() > max_coords:
            coords = np.sort(rng.choice(flat.numel(), size=max_coords, replace=False))

        errors = []
        for i in coords:
            original = flat[i].item()
            label = f"{name}{tuple(np.unravel_index(i, tensor.shape))}"
            flat[i] = original + h
            plus = _evaluate(f, label)
            flat[i] = original - h
            minus = _evaluate(f, label)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            errors.append(relative_error(float(grad[i]), numeric))

        errors = np.asarray(errors) if errors else np.zeros(1)
        worst = int(np.argmax(errors))
        index_of = lambda k: tuple(int(x) for x in np.unravel_index(coords[k], tensor.shape)) if len(coords) else ()
        rows.append(ParameterCheck(
            name=name,
            n_checked=len(coords),
            max_rel_error=float(errors[worst]),
            worst_index=index_of(worst),
            failing=[index_of(k) for k in np.flatnonzero(errors >= threshold)],
        ))

    report = GradCheckReport(rows=rows, threshold=threshold, step=h)
    logger.debug(f"Gradient check over {len(rows)} tensors: max relative error {report.max_rel_error:.3e}")
    return report
