"""Log-uniform sampling over (hidden units, dropout rate) and trial seed derivation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class HyperPoint:
    hidden_units: int
    dropout_rate: float

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def log2_units(self) -> float:
        return math.log2(self.hidden_units)


@dataclass(frozen=True)
class SearchSpace:
    """Axis-aligned box over log2(hidden units) and dropout rate.

    Both intervals are treated as open on sampling: ``c ~ U(lo, hi)`` and
    ``units = floor(2**c)``, so the upper unit bound is reached with
    probability zero.
    """

    log2_units_range: tuple[float, float] = (3.0, 10.0)
    dropout_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = self.log2_units_range
        if not lo < hi:
            raise ValueError(f"empty log2 units interval {self.log2_units_range}")
        if lo < 0:
            raise ValueError("log2 units lower bound must be >= 0")
        dlo, dhi = self.dropout_range
        if not dlo < dhi:
            raise ValueError(f"empty dropout interval {self.dropout_range}")
        if dlo < 0 or dhi > 1:
            raise ValueError(f"dropout interval {self.dropout_range} outside [0, 1]")

    @property
    def units_bounds(self) -> tuple[int, int]:
        lo, hi = self.log2_units_range
        return int(math.floor(2.0**lo)), int(math.floor(2.0**hi))

    def contains(self, point: HyperPoint) -> bool:
        ulo, uhi = self.units_bounds
        dlo, dhi = self.dropout_range
        return ulo <= point.hidden_units <= uhi and dlo <= point.dropout_rate <= dhi


def units_from_exponent(c: float) -> int:
    return max(1, int(math.floor(2.0**c)))


def sample_point(space: SearchSpace, rng: np.random.Generator) -> HyperPoint:
    c = rng.uniform(*space.log2_units_range)
    d = rng.uniform(*space.dropout_range)
    # uniform() may return the upper endpoint only through rounding; keep d < 1
    d = min(d, np.nextafter(1.0, 0.0))
    return HyperPoint(units_from_exponent(c), float(d))


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_trial_seed(master_seed: int, trial_index: int) -> int:
    """Mix ``master_seed + gamma * (trial_index + 1)`` through the splitmix64 finalizer."""
    if trial_index < 0:
        raise ValueError("trial_index must be >= 0")
    return splitmix64((master_seed + GOLDEN_GAMMA * (trial_index + 1)) & MASK64)
