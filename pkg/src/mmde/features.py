"""Optimization-status features: 5 population-global, 5 neighborhood-local
and 12 per-individual values for every population member.

Distances are normalized by the diameter of the search box, objective values
and gaps by the episode-wide span between the historical best and worst
evaluated objective, and counters by the episode horizon T. When the
objective span is still zero every span-normalized feature is defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evolution import Population, Neighborhoods, distance_matrix

N_GLOBAL = 5
N_NEIGHBORHOOD = 5
N_INDIVIDUAL = 12
N_FEATURES = N_GLOBAL + N_NEIGHBORHOOD + N_INDIVIDUAL

_ABLATIONS = ("full", "fg", "fn", "null")


@dataclass(frozen=True)
class StateFeatures:
    """Per-individual feature rows: f_pop = global + neighborhood, f_ind rest."""

    f_pop: np.ndarray  # (NP, 10)
    f_ind: np.ndarray  # (NP, 12)


def _safe_span(population: Population) -> float:
    span = population.objective_span
    return span if span > 0 else np.inf  # dividing by inf yields the defined 0


def extract_global(population: Population, dmat: np.ndarray | None = None) -> np.ndarray:
    """[mean pair distance, obj std, remaining time, global stagnation, mean obj]."""
    if dmat is None:
        dmat = distance_matrix(population.positions)
    n = population.size
    span = _safe_span(population)
    iu = np.triu_indices(n, k=1)
    t_max = population.horizon
    return np.array([
        dmat[iu].mean() / population.diameter,
        population.objectives.std() / span,
        (t_max - population.generation) / t_max,
        population.global_stagnation / t_max,
        population.objectives.mean() / span,
    ])


def extract_neighborhood(
    population: Population,
    neighborhoods: Neighborhoods,
    i: int,
    dmat: np.ndarray | None = None,
) -> np.ndarray:
    """[pair distance, obj std, stagnation, mean obj, quality rank] within the
    neighborhood of individual i."""
    if dmat is None:
        dmat = distance_matrix(population.positions)
    members = neighborhoods.indices[i]
    objs = population.objectives[members]
    span = _safe_span(population)
    sub = dmat[np.ix_(members, members)]
    iu = np.triu_indices(len(members), k=1)
    return np.array([
        sub[iu].mean() / population.diameter,
        objs.std() / span,
        population.nbhd_stagnation[i] / population.horizon,
        objs.mean() / span,
        neighborhoods.rank[i] / (population.size - 1),
    ])


def extract_individual(
    population: Population,
    neighborhoods: Neighborhoods,
    i: int,
    dmat: np.ndarray | None = None,
) -> np.ndarray:
    """Distances and objective gaps of individual i against the current best,
    the historical best, its neighborhood and the whole population."""
    if dmat is None:
        dmat = distance_matrix(population.positions)
    diameter = population.diameter
    span = _safe_span(population)
    objs = population.objectives
    xi = population.positions[i]
    obj_i = objs[i]
    cur_best = population.current_best_index
    members = neighborhoods.indices[i]
    nb_best = neighborhoods.best_member[i]
    others = np.arange(population.size) != i
    return np.array([
        dmat[i, cur_best] / diameter,
        np.linalg.norm(xi - population.best_position) / diameter,
        (obj_i - population.best_objective) / span,
        (obj_i - objs[cur_best]) / span,
        dmat[i, nb_best] / diameter,
        (obj_i - objs[nb_best]) / span,
        population.stagnation[i] / population.horizon,
        obj_i / span,
        (obj_i - objs[members]).mean() / span,
        dmat[i, members].mean() / diameter,
        (obj_i - objs[others]).mean() / span,
        dmat[i, others].mean() / diameter,
    ])


def extract_state(
    population: Population,
    neighborhoods: Neighborhoods,
    ablation: str = "full",
    dmat: np.ndarray | None = None,
) -> StateFeatures:
    """Stack per-individual feature rows, honoring the state ablation flag.

    `ablation`: "full" keeps everything, "fg" keeps only the global block,
    "fn" keeps only the neighborhood block, "null" zeroes all of f_pop.

    Vectorized across individuals; agrees with the per-index extractors to
    floating-point roundoff.
    """
    if ablation not in _ABLATIONS:
        raise ValueError(f"unknown state ablation {ablation!r}; expected one of {_ABLATIONS}")
    if dmat is None:
        dmat = distance_matrix(population.positions)
    n = population.size
    k = neighborhoods.k
    diameter = population.diameter
    span = _safe_span(population)
    t_max = population.horizon
    objs = population.objectives
    members = neighborhoods.indices           # (n, k)
    member_objs = objs[members]               # (n, k)
    rows = np.arange(n)

    f_pop = np.empty((n, N_GLOBAL + N_NEIGHBORHOOD))
    f_pop[:, :N_GLOBAL] = extract_global(population, dmat)

    sub = dmat[members[:, :, None], members[:, None, :]]  # (n, k, k)
    iu = np.triu_indices(k, k=1)
    f_pop[:, N_GLOBAL + 0] = sub[:, iu[0], iu[1]].mean(axis=1) / diameter
    f_pop[:, N_GLOBAL + 1] = member_objs.std(axis=1) / span
    f_pop[:, N_GLOBAL + 2] = population.nbhd_stagnation / t_max
    f_pop[:, N_GLOBAL + 3] = member_objs.mean(axis=1) / span
    f_pop[:, N_GLOBAL + 4] = neighborhoods.rank / (n - 1)

    cur_best = population.current_best_index
    nb_best = neighborhoods.best_member
    f_ind = np.empty((n, N_INDIVIDUAL))
    f_ind[:, 0] = dmat[:, cur_best] / diameter
    f_ind[:, 1] = np.linalg.norm(
        population.positions - population.best_position, axis=1) / diameter
    f_ind[:, 2] = (objs - population.best_objective) / span
    f_ind[:, 3] = (objs - objs[cur_best]) / span
    f_ind[:, 4] = dmat[rows, nb_best] / diameter
    f_ind[:, 5] = (objs - objs[nb_best]) / span
    f_ind[:, 6] = population.stagnation / t_max
    f_ind[:, 7] = objs / span
    f_ind[:, 8] = (objs[:, None] - member_objs).mean(axis=1) / span
    f_ind[:, 9] = dmat[rows[:, None], members].mean(axis=1) / diameter
    f_ind[:, 10] = (objs[:, None] - objs[None, :])[
        ~np.eye(n, dtype=bool)].reshape(n, n - 1).mean(axis=1) / span
    f_ind[:, 11] = dmat.sum(axis=1) / (n - 1) / diameter

    if ablation in ("fn", "null"):
        f_pop[:, :N_GLOBAL] = 0.0
    if ablation in ("fg", "null"):
        f_pop[:, N_GLOBAL:] = 0.0
    return StateFeatures(f_pop=f_pop, f_ind=f_ind)
