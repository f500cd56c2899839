"""Paired significance tests over per-instance outcomes of two models."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import binomtest


def mcnemar(a: Sequence[bool], b: Sequence[bool]) -> float:
    """Exact two-sided McNemar p-value for paired binary outcomes."""
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("outcome vectors differ in length")
    only_a = int(np.sum(a & ~b))
    only_b = int(np.sum(~a & b))
    if only_a + only_b == 0:
        return 1.0
    return float(binomtest(only_a, only_a + only_b, 0.5).pvalue)


def randomization_test(a: Sequence[float], b: Sequence[float], trials: int = 10000, seed: int = 0) -> float:
    """Approximate (Fisher) randomization test on the difference of paired means.

    Each trial swaps the two systems' values per instance with probability 1/2.
    Returns the add-one smoothed two-sided p-value.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("outcome vectors differ in length")
    diff = a - b
    observed = abs(diff.mean()) if len(diff) else 0.0
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(trials):
        signs = rng.choice((-1.0, 1.0), size=len(diff))
        if abs((signs * diff).mean()) >= observed - 1e-12:
            hits += 1
    return (hits + 1) / (trials + 1)
