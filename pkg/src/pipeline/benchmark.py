"""
Runtime scaling and parameter census of the filter layer.
"""

import time
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
import torch
from loguru import logger

from core.config import BenchConfig
from models.filter_layer import build_filter, efl_census, efl_param_count


def median_forward_seconds(layer: torch.nn.Module, length: int, d: int, reps: int,
                           generator: torch.Generator, warmup: int = 3) -> float:
    values = torch.randn(1, length, d, generator=generator)
    mask = torch.ones(1, length, dtype=torch.bool)
    timings = []
    with torch.no_grad():
        for _ in range(warmup):
            layer(values, mask)
        for _ in range(reps):
            start = time.perf_counter()
            layer(values, mask)
            timings.append(time.perf_counter() - start)
    return float(np.median(timings))


def runtime_table(config: BenchConfig, modes: Sequence[str] = ("efl", "attention"),
                  seed: int = 0, threads: int = 1) -> pd.DataFrame:
    """Median forward time per length and the doubling ratio t(2L)/t(L)"""
    previous_threads = torch.get_num_threads()
    torch.set_num_threads(threads)
    generator = torch.Generator().manual_seed(seed)
    rows = []
    try:
        for mode in modes:
            layer = build_filter(mode, config.d, config.k).eval()
            last = None
            for length in sorted(config.lengths):
                seconds = median_forward_seconds(layer, length, config.d, config.reps, generator)
                ratio = seconds / last[1] if last is not None and length == 2 * last[0] else float("nan")
                rows.append({"mode": mode, "L": length, "median_seconds": seconds, "ratio_vs_half": ratio})
                logger.info(f"bench {mode} L={length}: median {seconds * 1e3:.3f} ms, ratio {ratio:.3f}")
                last = (length, seconds)
    finally:
        torch.set_num_threads(previous_threads)
    return pd.DataFrame(rows)


def census_table(d_values: Sequence[int], k_values: Sequence[int], lengths: Sequence[int]) -> pd.DataFrame:
    """Closed form vs counted trainables of one filter layer plus its mixer slice"""
    rows = []
    for d in d_values:
        for k in k_values:
            if d % k:
                continue
            counts = [efl_census(d, k, length) for length in lengths]
            first = counts[0]
            rows.append({
                "d": d, "k": k,
                "closed_form": efl_param_count(d, k),
                "efl_weights": first["efl_weights"],
                "efl_biases": first["efl_biases"],
                "mixer_slice": first["mixer_slice"],
                "census": first["total"],
                "length_independent": all(c["total"] == first["total"] for c in counts),
            })
    return pd.DataFrame(rows)


def halving_ratios(d: int, k_values: Sequence[int], length: int = 64) -> List[Dict[str, float]]:
    """Census ratio when k doubles, holding d"""
    ks = sorted(k for k in k_values if d % k == 0)
    out = []
    for small, large in zip(ks, ks[1:]):
        if large != 2 * small:
            continue
        ratio = efl_census(d, large, length)["efl"] / efl_census(d, small, length)["efl"]
        out.append({"d": d, "k": small, "k_doubled": large, "ratio": ratio})
    return out


def run_benchmarks(config: BenchConfig, seed: int = 0) -> Dict[str, pd.DataFrame]:
    runtime = runtime_table(config, seed=seed)
    census = census_table([config.d, 128, 256], [1, 2, 4, 8, 16, 64], config.census_lengths)
    halving = pd.DataFrame(halving_ratios(256, [1, 2, 4, 8, 16]))
    return {"runtime": runtime, "census": census, "halving": halving}
