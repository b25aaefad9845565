"""Shift-detection Monte Carlo for the boundary detector.

Each run feeds 500 losses drawn from N(1, 0.01) and then N(3, 0.01), where
0.01 is the standard deviation.  The scalar oracle below re-derives the
moment recursion independently of the module; the two must agree exactly.
"""

from __future__ import annotations

import numpy as np

from codepth.detector import BoundaryDetector

SHIFT_AT = 500
AFTER = 50
MEAN_BEFORE, MEAN_AFTER, SCALE = 1.0, 3.0, 0.01
ALPHA, WARMUP, INIT_VAR = 0.1, 10, 1e-4


def stream(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(MEAN_BEFORE, SCALE, SHIFT_AT), rng.normal(MEAN_AFTER, SCALE, AFTER)])


def oracle_trace(losses) -> list:
    mu = var = None
    out = []
    for n, x in enumerate(losses):
        if n == 0:
            mu, var = float(x), INIT_VAR
            out.append(0.0)
            continue
        out.append((x - mu) ** 2 / var if n >= WARMUP else 0.0)
        dev = x - mu
        mu = mu + ALPHA * dev
        var = max(var + ALPHA * dev * dev, 1e-8)
    return out


def run(n_runs: int = 100) -> dict:
    delays, rates, mismatches = [], [], 0
    for seed in range(n_runs):
        losses = stream(seed)
        det = BoundaryDetector(alpha=ALPHA, warmup=WARMUP, init_var=INIT_VAR)
        ds = [det.observe(float(x)) for x in losses]
        mismatches += int(sum(a != b for a, b in zip(ds, oracle_trace(losses))))
        hits = [t for t in range(SHIFT_AT, len(ds)) if ds[t] > 1.0]
        delays.append(hits[0] - SHIFT_AT if hits else None)
        steady = np.array(ds[WARMUP:SHIFT_AT])
        rates.append(float(np.mean(steady > 1.0)))
    return {
        "runs": n_runs,
        "mismatches": mismatches,
        "missed": sum(d is None for d in delays),
        "max_delay": max(d for d in delays if d is not None),
        "mean_rate": float(np.mean(rates)),
        "max_rate": float(np.max(rates)),
    }
