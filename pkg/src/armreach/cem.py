"""Cross-entropy method over a diagonal Gaussian search distribution.

The optimizer only sees parameter vectors and their scores; it knows nothing
about arms or rewards. Any object with the same ``ask``/``tell`` pair can
stand in for it during training.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np


class OptimizerAbort(RuntimeError):
    pass


@dataclass
class SearchDistribution:
    mean: np.ndarray
    std: np.ndarray

    def copy(self) -> "SearchDistribution":
        return SearchDistribution(self.mean.copy(), self.std.copy())


def n_elites(population: int, elite_frac: float) -> int:
    return max(1, math.ceil(elite_frac * population))


def select_elites(scores, elite_frac: float, tiebreak=None) -> np.ndarray:
    """Indices of the top ``ceil(elite_frac * N)`` scores, best first.

    Equal scores are ordered by ``tiebreak`` (higher is better) when given,
    then by lower candidate index.
    """
    scores = np.asarray(scores, dtype=float)
    k = n_elites(len(scores), elite_frac)
    idx = np.arange(len(scores))
    keys = [idx]
    if tiebreak is not None:
        keys.append(-np.asarray(tiebreak, dtype=float))
    keys.append(-scores)
    # lexsort sorts by the last key first and is stable
    return np.lexsort(keys)[:k]


def cem_iterate(
    dist: SearchDistribution,
    samples: np.ndarray,
    scores,
    elite_frac: float,
    std_floor: float,
    tiebreak=None,
) -> tuple[SearchDistribution, np.ndarray]:
    """Refit the distribution to the elite samples; returns (new, elite indices)."""
    scores = np.asarray(scores, dtype=float)
    if len(scores) != len(samples):
        raise ValueError("need one score per sample")
    if np.all(np.isneginf(scores)):
        raise OptimizerAbort(
            f"all {len(scores)} candidates faulted; mean |theta| = {np.abs(dist.mean).mean():.3g}, "
            f"mean std = {dist.std.mean():.3g}"
        )
    elites = select_elites(scores, elite_frac, tiebreak)
    chosen = samples[elites]
    mean = chosen.mean(axis=0)
    std = np.maximum(chosen.std(axis=0), std_floor)
    return SearchDistribution(mean, std), elites


class CEM:
    """Ask/tell wrapper holding the distribution and the sampling stream."""

    def __init__(
        self,
        mean: np.ndarray,
        sigma_init: float,
        population: int,
        elite_frac: float,
        std_floor: float,
        rng: np.random.Generator,
    ):
        mean = np.asarray(mean, dtype=float)
        self.dist = SearchDistribution(mean.copy(), np.full_like(mean, sigma_init))
        self.population = population
        self.elite_frac = elite_frac
        self.std_floor = std_floor
        self.rng = rng
        self._samples: np.ndarray | None = None

    def ask(self) -> np.ndarray:
        noise = self.rng.standard_normal((self.population, self.dist.mean.size))
        self._samples = self.dist.mean + self.dist.std * noise
        return self._samples

    def tell(self, scores, tiebreak=None) -> np.ndarray:
        if self._samples is None:
            raise RuntimeError("tell() without ask()")
        self.dist, elites = cem_iterate(
            self.dist, self._samples, scores, self.elite_frac, self.std_floor, tiebreak
        )
        self._samples = None
        return elites
