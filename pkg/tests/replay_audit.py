"""Long randomized exercise of the replay buffer with an admission audit."""

from __future__ import annotations

import math

import numpy as np

from codepth.replay import REPLAY, ReplayBuffer


def capacity_audit(n_ops: int = 1_000_000, capacity: int = 64, seed: int = 0) -> dict:
    """Mixed store/draw/choose traffic; tracks the peak size and every stored D."""
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(capacity, np.random.default_rng(seed + 1))
    coin = np.random.default_rng(seed + 2)
    kinds = rng.integers(0, 3, n_ops)
    ds = rng.exponential(1.0, n_ops)
    peak, sizes_ok, admitted = 0, True, 0
    prev = 0
    for i in range(n_ops):
        k = kinds[i]
        if k == 0:
            admitted += buf.maybe_store(i, float(ds[i]), i)
        elif k == 1 and len(buf):
            buf.draw()
        else:
            buf.choose_source(coin)
        n = len(buf)
        # non-decreasing until full, then constant
        sizes_ok &= n >= prev and (prev < capacity or n == capacity)
        prev = n
        peak = max(peak, n)
    bad = [m for m in buf.meta if not m.d > 1.0]
    stored_ids = sorted(buf.items)
    return {
        "ops": n_ops,
        "capacity": capacity,
        "peak": peak,
        "monotone": bool(sizes_ok),
        "admitted": admitted,
        "low_d_items": len(bad),
        "items_match_meta": all(ds[i] > 1.0 for i in stored_ids),
    }


def draw_frequencies(n: int = 10_000, seed: int = 0) -> dict:
    buf = ReplayBuffer(4, np.random.default_rng(seed))
    for item in "abcd":
        buf.maybe_store(item, 2.0)
    counts = {k: 0 for k in "abcd"}
    for _ in range(n):
        counts[buf.draw()] += 1
    sigma = math.sqrt(0.25 * 0.75 / n)
    freqs = {k: v / n for k, v in counts.items()}
    return {"freqs": freqs, "bound": 3 * sigma, "size_after": len(buf), "ok": all(abs(f - 0.25) <= 3 * sigma for f in freqs.values())}


def coin_fraction(n: int = 10_000, seed: int = 0) -> float:
    buf = ReplayBuffer(8, np.random.default_rng(99))
    buf.maybe_store("x", 5.0)
    coin = np.random.default_rng(seed)
    return sum(buf.choose_source(coin) == REPLAY for _ in range(n)) / n
