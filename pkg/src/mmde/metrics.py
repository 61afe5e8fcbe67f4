"""Peak counting and the peak-ratio / success-rate metrics.

A run feeds every near-peak evaluation into a `PeakArchive`; after the run,
`count_peaks` greedily selects archive entries that are within the accuracy
level of the peak height and mutually separated by more than the niche
radius. PR and SR aggregate those counts over independent runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .benchmark import Problem

ACCURACY_LEVELS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)

# Solutions farther than this below the peak are never worth archiving:
# the loosest standard accuracy level is 1e-1.
ARCHIVE_BAND = 1e-1


class PeakArchive:
    """Bounded store of near-peak solutions, deduplicated by niche radius.

    A candidate within the niche radius of an existing entry keeps only the
    better of the pair. Capacity overflow evicts the worst entry.
    """

    def __init__(self, problem: Problem, capacity: int | None = None):
        self.problem = problem
        self.capacity = capacity if capacity is not None else 10 * problem.n_global_optima
        d = problem.dimension
        self._positions = np.empty((self.capacity, d))
        self._objectives = np.empty(self.capacity)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def positions(self) -> np.ndarray:
        return self._positions[: self._size].copy()

    @property
    def objectives(self) -> np.ndarray:
        return self._objectives[: self._size].copy()

    def offer(self, position: np.ndarray, objective: float) -> bool:
        """Offer one evaluated solution; returns True if it was stored."""
        if self.problem.peak_height - objective > ARCHIVE_BAND:
            return False
        return self._insert(np.asarray(position, dtype=float), float(objective))

    def offer_many(self, positions: np.ndarray, objectives: np.ndarray) -> int:
        near = self.problem.peak_height - objectives <= ARCHIVE_BAND
        stored = 0
        for idx in np.flatnonzero(near):
            stored += self._insert(positions[idx].astype(float), float(objectives[idx]))
        return stored

    def _insert(self, position: np.ndarray, objective: float) -> bool:
        r = self.problem.niche_radius
        while True:
            if self._size == 0:
                break
            d = np.linalg.norm(self._positions[: self._size] - position, axis=1)
            j = int(np.argmin(d))
            if d[j] > r:
                break
            # within the niche radius of entry j: keep only the better one
            if objective <= self._objectives[j]:
                return False
            self._remove(j)
        if self._size == self.capacity:
            worst = int(np.argmin(self._objectives[: self._size]))
            if objective <= self._objectives[worst]:
                return False
            self._remove(worst)
        self._positions[self._size] = position
        self._objectives[self._size] = objective
        self._size += 1
        return True

    def _remove(self, idx: int) -> None:
        last = self._size - 1
        if idx != last:
            self._positions[idx] = self._positions[last]
            self._objectives[idx] = self._objectives[last]
        self._size = last


def count_peaks(
    positions: np.ndarray,
    objectives: np.ndarray,
    problem: Problem,
    accuracy: float,
) -> int:
    """Number of distinct global optima represented in an archive.

    Greedy seed selection: scan solutions by objective descending; accept one
    as a found optimum iff it is within `accuracy` of the peak height and
    farther than the niche radius from every previously accepted seed.
    """
    if len(positions) == 0:
        return 0
    positions = np.asarray(positions, dtype=float)
    objectives = np.asarray(objectives, dtype=float)
    order = np.argsort(-objectives, kind="stable")
    seeds: list[np.ndarray] = []
    r = problem.niche_radius
    for idx in order:
        if problem.peak_height - objectives[idx] > accuracy:
            continue
        x = positions[idx]
        if all(np.linalg.norm(x - s) > r for s in seeds):
            seeds.append(x)
            if len(seeds) == problem.n_global_optima:
                break
    return len(seeds)


@dataclass
class RunResult:
    """Per-run peak counts at each tracked accuracy level."""

    problem_id: int
    seed: int
    npf: dict[float, int] = field(default_factory=dict)
    evaluations: int = 0

    def is_success(self, problem: Problem, accuracy: float) -> bool:
        return self.npf.get(accuracy, 0) == problem.n_global_optima


def score_archive(archive: PeakArchive, accuracies=ACCURACY_LEVELS) -> dict[float, int]:
    return {
        acc: count_peaks(archive.positions, archive.objectives, archive.problem, acc)
        for acc in accuracies
    }


def peak_ratio(results: list[RunResult], problem: Problem, accuracy: float) -> float:
    """Found optima over (known optima x runs)."""
    if not results:
        raise ValueError("peak_ratio requires at least one run")
    total = sum(res.npf.get(accuracy, 0) for res in results)
    return total / (problem.n_global_optima * len(results))


def success_rate(results: list[RunResult], problem: Problem, accuracy: float) -> float:
    """Fraction of runs that found every known optimum."""
    if not results:
        raise ValueError("success_rate requires at least one run")
    wins = sum(res.is_success(problem, accuracy) for res in results)
    return wins / len(results)
