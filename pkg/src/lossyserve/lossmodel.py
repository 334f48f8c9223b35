"""Seeded packet-loss generators (Bernoulli and two-state Gilbert-Elliott)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid

MODELS = ("bernoulli", "gilbert-elliott")


@dataclass(frozen=True)
class LossSpec:
    model: str = "bernoulli"
    rate: float = 0.0
    burst: float = 1.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigInvalid(f"loss model must be one of {MODELS}, got {self.model!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ConfigInvalid(f"loss rate must lie in [0, 1), got {self.rate}")
        if self.burst < 1.0:
            raise ConfigInvalid(f"mean burst length must be >= 1, got {self.burst}")

    @property
    def transitions(self) -> tuple[float, float]:
        """(P(good->bad), P(bad->good)) giving stationary loss ``rate`` and mean burst ``burst``.

        The bad state always drops and the good state never does.
        """
        r = 1.0 / self.burst
        p = self.rate * r / (1.0 - self.rate)
        return min(p, 1.0), r

    def mask(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Boolean array, True where the packet is lost."""
        if n <= 0 or self.rate == 0.0:
            return np.zeros(max(n, 0), dtype=bool)
        if self.model == "bernoulli":
            return rng.random(n) < self.rate
        p, r = self.transitions
        u = rng.random(n)
        out = np.empty(n, dtype=bool)
        bad = rng.random() < self.rate
        for i in range(n):
            out[i] = bad
            bad = (u[i] >= r) if bad else (u[i] < p)
        return out


def loss_mask(n: int, rate: float, seed: int, model: str = "bernoulli", burst: float = 1.0) -> np.ndarray:
    return LossSpec(model, rate, burst).mask(n, np.random.default_rng(seed))
