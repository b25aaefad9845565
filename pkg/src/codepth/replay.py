"""Threshold-admitted replay memory with uniform random eviction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np

ONLINE = "online"
REPLAY = "replay"


@dataclass
class ReplaySample:
    """Network inputs only; never depth targets or features.

    ``key`` identifies the generating (domain, frame) so the buffer can be
    checkpointed by reference and rebuilt deterministically.
    """

    mode: str
    frames: Tuple[np.ndarray, ...]
    source_domain: str = ""
    key: Optional[Tuple[str, int]] = None


@dataclass
class Admission:
    sample_id: int
    step: int
    d: float
    origin: str  # "online" or "warmup"


class ReplayBuffer:
    def __init__(self, capacity: int = 2048, rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("replay capacity must be at least 1")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.items: List[Any] = []
        self.meta: List[Admission] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.items)

    def _insert(self, sample: Any, admission: Admission) -> None:
        if len(self.items) < self.capacity:
            self.items.append(sample)
            self.meta.append(admission)
        else:
            victim = int(self.rng.integers(len(self.items)))
            self.items[victim] = sample
            self.meta[victim] = admission

    def maybe_store(self, sample: Any, d: float, step: int = -1) -> bool:
        """Admit ``sample`` iff ``d > 1``; a full buffer evicts a random item."""
        if not d > 1.0:
            return False
        self._insert(sample, Admission(self._next_id, step, float(d), "online"))
        self._next_id += 1
        return True

    def preload(self, samples) -> None:
        """Seed the memory with warm-up (pre-training) inputs."""
        for s in samples:
            self._insert(s, Admission(self._next_id, -1, float("nan"), "warmup"))
            self._next_id += 1

    def draw(self) -> Any:
        if not self.items:
            raise IndexError("draw from an empty replay buffer")
        return self.items[int(self.rng.integers(len(self.items)))]

    def choose_source(self, coin: Optional[np.random.Generator] = None) -> str:
        """Fair coin between the online stream and replay; online if empty."""
        if not self.items:
            return ONLINE
        gen = coin if coin is not None else self.rng
        return REPLAY if gen.random() < 0.5 else ONLINE

    def admitted(self) -> List[Admission]:
        return [m for m in self.meta if m.origin == "online"]
