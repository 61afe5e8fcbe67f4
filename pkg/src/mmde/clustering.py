"""Density clustering of the population and the clustering-based rewards.

Positions are min-max normalized by the problem bounds before distances are
computed, so a single eps works across problems with very different scales.
Noise points count as singleton clusters by default, which rewards occupying
isolated basins; both choices are exposed as flags.
"""

from __future__ import annotations

import numpy as np

NOISE = -1


def dbscan(points: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Euclidean DBSCAN labels: cluster ids 0.. in discovery order, noise -1.

    A core point has at least `min_samples` neighbors within `eps`, itself
    included. Points are scanned in ascending index order, so border points
    go to the first cluster that reaches them.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if min_samples < 1:
        raise ValueError(f"min_samples must be >= 1, got {min_samples}")
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    diff = points[:, None, :] - points[None, :, :]
    within = np.einsum("ijk,ijk->ij", diff, diff) <= eps * eps
    is_core = within.sum(axis=1) >= min_samples

    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not is_core[i]:
            continue
        # frontier expansion: unlabeled points adjacent to this cluster's
        # cores join it; only cores among the newcomers keep expanding
        frontier = np.zeros(n, dtype=bool)
        frontier[i] = True
        labels[i] = cluster
        while frontier.any():
            reached = within[frontier].any(axis=0)
            fresh = reached & (labels == NOISE)
            labels[fresh] = cluster
            frontier = fresh & is_core
        cluster += 1
    return labels


def normalize_positions(positions: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return (positions - lower) / (upper - lower)


def cluster_population(
    positions: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    eps: float,
    min_samples: int,
) -> np.ndarray:
    return dbscan(normalize_positions(positions, lower, upper), eps, min_samples)


def _cluster_bests(objectives: np.ndarray, labels: np.ndarray, noise_as_singleton: bool) -> list[float]:
    bests: dict[int, float] = {}
    singletons: list[float] = []
    for obj, lab in zip(objectives, labels):
        if lab == NOISE:
            if noise_as_singleton:
                singletons.append(float(obj))
            continue
        if lab not in bests or obj > bests[lab]:
            bests[lab] = float(obj)
    return list(bests.values()) + singletons


def cluster_count(labels: np.ndarray, noise_as_singleton: bool = True) -> int:
    n_clusters = len(set(int(l) for l in labels if l != NOISE))
    if noise_as_singleton:
        n_clusters += int(np.sum(labels == NOISE))
    return n_clusters


def reward_clb(
    objectives: np.ndarray,
    labels: np.ndarray,
    noise_as_singleton: bool = True,
    normalizer: tuple[float, float] | None = None,
) -> float:
    """Sum over clusters of the cluster's best objective value.

    `normalizer` = (episode worst, episode best) switches on min-max scaling
    of each cluster best before summing; the degenerate zero-span case maps
    everything to 0.
    """
    objectives = np.asarray(objectives, dtype=float)
    if len(objectives) == 0:
        raise ValueError("reward_clb needs a non-empty population")
    bests = _cluster_bests(objectives, np.asarray(labels), noise_as_singleton)
    if normalizer is not None:
        worst, best = normalizer
        span = best - worst
        if span <= 0:
            return 0.0
        bests = [(b - worst) / span for b in bests]
    return float(sum(bests))


def reward_b(objectives: np.ndarray) -> float:
    """Best objective value in the current population."""
    objectives = np.asarray(objectives, dtype=float)
    if len(objectives) == 0:
        raise ValueError("reward_b needs a non-empty population")
    return float(objectives.max())


def reward_c(labels: np.ndarray, noise_as_singleton: bool = True) -> float:
    """Number of clusters in the current population."""
    return float(cluster_count(np.asarray(labels), noise_as_singleton))
