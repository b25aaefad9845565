"""Soft task-boundary detection from a running Gaussian model of the loss.

The loss is modelled as ``N(mu, sigma)`` with both moments tracked by a
low-pass filter.  The squared Mahalanobis distance of a new loss from the
previous moments is the boundary evidence ``D``; ``D > 1`` is read as a
likely boundary.

The variance recursion deliberately has no decay term:
``var <- var + alpha * (loss - mu_old)**2``.  It therefore never decreases,
so ``D`` for a fixed deviation shrinks as the stream gets longer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import List, Optional

INIT_VAR = 1e-4
VAR_FLOOR = 1e-8
WARMUP = 10


@dataclass
class LossStats:
    mu: float = 0.0
    var: float = INIT_VAR
    alpha: float = 0.1
    count: int = 0
    warmup: int = WARMUP
    var_floor: float = VAR_FLOOR

    @property
    def ready(self) -> bool:
        return self.count >= self.warmup

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossStats":
        return cls(**d)


def mahalanobis(stats: LossStats, loss: float) -> float:
    """Squared distance ``(loss - mu)**2 / var``; 0 while still warming up."""
    if not stats.ready:
        return 0.0
    return (loss - stats.mu) ** 2 / stats.var


def log_new_task_prob(stats: LossStats, loss: float) -> float:
    """``D/2 + log(sigma * sqrt(2 pi))``, with the sign as the model is stated.

    Only its monotonicity in ``D`` is used anywhere downstream.
    """
    d = mahalanobis(stats, loss)
    return 0.5 * d + math.log(math.sqrt(stats.var) * math.sqrt(2.0 * math.pi))


def update(stats: LossStats, loss: float) -> LossStats:
    """Low-pass update of both moments, both driven by the pre-update mean."""
    if not math.isfinite(loss):
        raise ValueError(f"loss statistics: refusing non-finite loss {loss!r}")
    if stats.count == 0:
        return LossStats(loss, stats.var, stats.alpha, 1, stats.warmup, stats.var_floor)
    dev = loss - stats.mu
    mu = stats.mu + stats.alpha * dev
    var = max(stats.var + stats.alpha * dev * dev, stats.var_floor)
    return LossStats(mu, var, stats.alpha, stats.count + 1, stats.warmup, stats.var_floor)


def is_boundary(d: float) -> bool:
    return d > 1.0


@dataclass
class TraceRow:
    step: int
    loss: float
    mu: float
    var: float
    D: float
    boundary: bool


class BoundaryDetector:
    """Stateful wrapper used by the training loop.

    :meth:`observe` scores a loss against the current moments and then folds
    it in.  :meth:`peek` scores without updating (replayed samples).
    """

    def __init__(self, alpha: float = 0.1, warmup: int = WARMUP, init_var: float = INIT_VAR):
        self.stats = LossStats(var=init_var, alpha=alpha, warmup=warmup)
        self.trace: List[TraceRow] = []
        self.last_d = 0.0

    def peek(self, loss: float) -> float:
        return mahalanobis(self.stats, loss)

    def observe(self, loss: float, step: Optional[int] = None) -> float:
        d = mahalanobis(self.stats, loss)
        self.stats = update(self.stats, loss)
        self.last_d = d
        if step is not None:
            self.trace.append(TraceRow(step, loss, self.stats.mu, self.stats.var, d, is_boundary(d)))
        return d
