"""Seeded exogenous processes: demand and price chains, renewable generation.

Random streams
--------------
All randomness comes from numpy's PCG64 generator. A stream is identified by
the master seed plus an integer key tuple and built as
``PCG64(SeedSequence(master_seed, spawn_key=key))``, so independent streams
never overlap and each one is reproducible on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy import stats

DEFAULT_SOLAR_RATES = (0.5, 4.0, 6.0, 1.0)
DEFAULT_WIND_RATE = 3.0


class Stream(IntEnum):
    """First element of every stream key."""

    TRAIN_ENV = 1
    TRAIN_PRICE = 2
    TRAIN_AGENT = 3
    EVAL_ENV = 4
    EVAL_PRICE = 5


def spawn_rng(master_seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def random_stochastic_matrix(n: int, seed: int | None) -> np.ndarray:
    """Row-stochastic matrix whose rows are normalized uniform(0, 1) draws."""
    if n < 1:
        raise ValueError("matrix size must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    raw = rng.random((n, n))
    return raw / raw.sum(axis=1, keepdims=True)


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    n = transition.shape[0]
    a = np.vstack([transition.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def draw_index(cumulative: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; zero-probability entries are never selected."""
    return min(int(np.searchsorted(cumulative, u, side="right")), len(cumulative) - 1)


@dataclass
class FiniteMarkovChain:
    alphabet: tuple[int, ...]
    transition: np.ndarray
    current: int = 0

    def __post_init__(self):
        self.alphabet = tuple(int(v) for v in self.alphabet)
        self.transition = np.asarray(self.transition, dtype=float)
        n = len(self.alphabet)
        if len(set(self.alphabet)) != n:
            raise ValueError(f"alphabet values not distinct: {self.alphabet}")
        if self.transition.shape != (n, n):
            raise ValueError(f"transition shape {self.transition.shape} != ({n}, {n})")
        if (self.transition < 0).any():
            raise ValueError("negative transition probability")
        if not np.allclose(self.transition.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("transition rows must sum to 1")
        if not 0 <= self.current < n:
            raise ValueError(f"current index {self.current} out of range")
        self._cumulative = np.cumsum(self.transition, axis=1)

    @classmethod
    def random(cls, alphabet: Sequence[int], seed: int, current: int = 0):
        return cls(tuple(alphabet), random_stochastic_matrix(len(alphabet), seed), current)

    @property
    def value(self) -> int:
        return self.alphabet[self.current]

    @property
    def cumulative(self) -> np.ndarray:
        return self._cumulative

    def index_of(self, value: int) -> int:
        return self.alphabet.index(value)

    def row(self, index: int | None = None) -> np.ndarray:
        """Exact one-step next-state probabilities."""
        return self.transition[self.current if index is None else index]

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.transition)

    def copy(self, current: int | None = None) -> "FiniteMarkovChain":
        return FiniteMarkovChain(
            self.alphabet, self.transition, self.current if current is None else current
        )


def sample_chain(chain: FiniteMarkovChain, rng: np.random.Generator) -> int:
    """Advance the chain one transition and return the new value."""
    chain.current = draw_index(chain.cumulative[chain.current], rng.random())
    return chain.value


@dataclass(frozen=True)
class RenewableSource:
    kind: str = "none"  # solar | wind | none
    slot_rates: tuple[float, ...] = ()
    cap: int = 8

    def __post_init__(self):
        if self.kind not in ("solar", "wind", "none"):
            raise ValueError(f"unknown renewable kind {self.kind!r}")
        object.__setattr__(self, "slot_rates", tuple(float(r) for r in self.slot_rates))
        if any(r < 0 for r in self.slot_rates):
            raise ValueError("Poisson rates must be >= 0")
        if self.kind == "none" and any(self.slot_rates):
            raise ValueError("a 'none' source must have zero rates")
        if self.cap < 0:
            raise ValueError("cap must be >= 0")

    @classmethod
    def default(cls, kind: str, slots_per_day: int = 4, cap: int = 8) -> "RenewableSource":
        if kind == "solar":
            if slots_per_day != len(DEFAULT_SOLAR_RATES):
                raise ValueError(
                    f"no default solar profile for {slots_per_day} slots; give rates"
                )
            rates = DEFAULT_SOLAR_RATES
        elif kind == "wind":
            rates = (DEFAULT_WIND_RATE,) * slots_per_day
        else:
            rates = (0.0,) * slots_per_day
        return cls(kind, rates, cap)

    def rate(self, slot: int) -> float:
        if not self.slot_rates:
            return 0.0
        return self.slot_rates[slot - 1]

    def pmf(self, slot: int) -> np.ndarray:
        """Exact mass on 0..cap; the Poisson tail beyond cap piles onto cap."""
        lam = self.rate(slot)
        k = np.arange(self.cap + 1)
        if lam == 0.0:
            out = np.zeros(self.cap + 1)
            out[0] = 1.0
            return out
        out = stats.poisson.pmf(k, lam)
        out[-1] = stats.poisson.sf(self.cap - 1, lam)
        return out

    def mean(self, slot: int) -> float:
        return float(np.arange(self.cap + 1) @ self.pmf(slot))


def sample_renewable(source: RenewableSource, slot: int, rng: np.random.Generator) -> int:
    lam = source.rate(slot)
    if lam == 0.0:
        return 0
    return min(int(rng.poisson(lam)), source.cap)
