"""
CSV export of per-user prompt vectors for offline projection.
"""

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import torch
from loguru import logger

from training.batching import TuneCase, UserFeatureStore, evaluation_cases


def _long_frame(values: np.ndarray, users: List[int], index_names: List[str]) -> pd.DataFrame:
    """(n_users, *index, width) -> one row per (user, *index) with v0..v{width-1} columns"""
    n, width = values.shape[0], values.shape[-1]
    grid = np.indices(values.shape[1:-1]).reshape(len(index_names), -1).T if index_names else np.zeros((1, 0), int)
    rows = []
    for row, user in enumerate(users):
        flat = values[row].reshape(-1, width)
        for position, vector in zip(grid, flat):
            rows.append([user, *position.tolist(), *vector.tolist()])
    columns = ["user", *index_names, *[f"v{i}" for i in range(width)]]
    return pd.DataFrame(rows, columns=columns)


def collect_prompts(prompt_module: torch.nn.Module, backbone: torch.nn.Module, store: UserFeatureStore,
                    cases: Optional[List[TuneCase]] = None, batch_size: int = 256) -> Dict[str, pd.DataFrame]:
    """Prompt matrix P, factor bank E and injected tokens per user"""
    cases = evaluation_cases(store.spec) if cases is None else cases
    users = [c.user for c in cases]
    prompts, factors, tokens = [], [], []
    was_training = prompt_module.training
    prompt_module.eval()
    with torch.no_grad():
        for start in range(0, len(cases), batch_size):
            _, features = store.collate(cases[start:start + batch_size])
            output = prompt_module(features, backbone.tables)
            if output.has_banks:
                prompts.append(output.prompts.double().numpy())
                factors.append(output.factors.double().numpy())
            layers = [t for t in output.tokens if t is not None]
            tokens.append(torch.stack(layers, dim=1).double().numpy())
    prompt_module.train(was_training)

    frames = {}
    if prompts:
        frames["prompts"] = _long_frame(np.concatenate(prompts), users, ["layer"])
        frames["factors"] = _long_frame(np.concatenate(factors), users, ["row"])
        n_factors = getattr(prompt_module, "n_factors", 1)
        frames["factors"].insert(1, "group", frames["factors"]["row"] // n_factors)
        frames["factors"].insert(2, "n", frames["factors"]["row"] % n_factors)
        frames["factors"] = frames["factors"].drop(columns="row")
    if tokens:
        frames["tokens"] = _long_frame(np.concatenate(tokens), users, ["layer", "c"])
    return frames


def export_prompts(prompt_module: torch.nn.Module, backbone: torch.nn.Module, store: UserFeatureStore,
                   directory: str) -> Dict[str, str]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, frame in collect_prompts(prompt_module, backbone, store).items():
        path = out / f"{name}.csv"
        frame.to_csv(path, index=False, float_format="%.8g")
        paths[name] = str(path)
        logger.info(f"Exported {len(frame)} {name} rows to {path}")
    return paths


def mean_pairwise_cosine(P: np.ndarray) -> float:
    """Mean cosine similarity over distinct row pairs of each (rows, width) matrix, averaged over users"""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 2:
        P = P[None]
    n_rows = P.shape[1]
    if n_rows < 2:
        return float("nan")
    norms = np.linalg.norm(P, axis=-1, keepdims=True)
    unit = P / np.maximum(norms, 1e-12)
    gram = unit @ unit.transpose(0, 2, 1)
    upper = np.triu_indices(n_rows, k=1)
    return float(gram[:, upper[0], upper[1]].mean())
