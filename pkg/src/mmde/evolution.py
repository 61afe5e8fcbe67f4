"""Population maintenance for the strategy-switched differential evolution.

Each generation: build KNN neighborhoods, apply one of five per-individual
search strategies, binomial crossover (skipped for the pure local-search
strategy), reflect-and-clamp bound repair, then greedy replacement (crowding
by default: a trial replaces the nearest member it matches or beats).
Stagnation counters, historical extremes and the peak archive are updated at
the end of the generation.

All randomness for a generation is drawn up front from a stream derived from
(seed, generation), one block row per individual, so trajectories are
reproducible no matter how or in what order individuals are processed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .benchmark import Problem
from .metrics import PeakArchive

N_STRATEGIES = 5
GAUSSIAN_LOCAL = 1  # strategy 1 skips crossover

# spawn-key tags for the derived random streams
_KEY_INIT = 0
_KEY_STEP = 1


class BudgetExhaustedError(RuntimeError):
    """Raised when a generation would exceed the evaluation budget."""


class InvalidConfigError(ValueError):
    """Raised for configuration that cannot produce a valid run."""


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=key)))


@dataclass
class Individual:
    position: np.ndarray
    objective: float
    stagnation: int


@dataclass
class Population:
    """State of one run: positions, objectives and evolution-path bookkeeping."""

    problem: Problem
    positions: np.ndarray        # (NP, D)
    objectives: np.ndarray       # (NP,)
    stagnation: np.ndarray       # (NP,) generations since individual last replaced
    nbhd_stagnation: np.ndarray  # (NP,) generations since neighborhood best improved
    nbhd_prev_best: np.ndarray   # (NP,) previous-generation neighborhood best
    generation: int
    seed: int
    evals_used: int
    horizon: int                 # T, maximal number of generations
    best_position: np.ndarray    # historical best over all evaluated points
    best_objective: float
    worst_objective: float       # historical worst over all evaluated points
    global_stagnation: int       # generations since historical best improved

    @property
    def size(self) -> int:
        return len(self.positions)

    @property
    def diameter(self) -> float:
        return self.problem.diameter

    @property
    def objective_span(self) -> float:
        return self.best_objective - self.worst_objective

    @property
    def current_best_index(self) -> int:
        return int(np.argmax(self.objectives))

    def individual(self, i: int) -> Individual:
        return Individual(self.positions[i].copy(), float(self.objectives[i]),
                          int(self.stagnation[i]))


@dataclass
class Neighborhoods:
    """KNN index lists plus per-neighborhood best member and quality rank."""

    indices: np.ndarray     # (NP, k) neighbor indices, self excluded
    best_member: np.ndarray  # (NP,) index of the best individual in each list
    rank: np.ndarray        # (NP,) 0 = best neighborhood
    k: int


def default_horizon(max_fes: int, np_size: int) -> int:
    return (max_fes - np_size) // np_size


def init_population(
    problem: Problem,
    np_size: int,
    seed: int,
    k: int = 4,
    horizon: int | None = None,
    archive: PeakArchive | None = None,
) -> Population:
    """Uniform random population within bounds; costs NP evaluations."""
    if np_size <= k:
        raise InvalidConfigError(f"population size {np_size} must exceed k={k}")
    rng = derive_rng(seed, _KEY_INIT)
    positions = rng.uniform(problem.lower, problem.upper, size=(np_size, problem.dimension))
    objectives = problem.evaluate_many(positions)
    if horizon is None:
        horizon = default_horizon(50000, np_size)
    if archive is not None:
        archive.offer_many(positions, objectives)
    best = int(np.argmax(objectives))
    return Population(
        problem=problem,
        positions=positions,
        objectives=objectives,
        stagnation=np.zeros(np_size, dtype=int),
        nbhd_stagnation=np.zeros(np_size, dtype=int),
        nbhd_prev_best=np.full(np_size, -np.inf),
        generation=0,
        seed=seed,
        evals_used=np_size,
        horizon=horizon,
        best_position=positions[best].copy(),
        best_objective=float(objectives[best]),
        worst_objective=float(objectives.min()),
        global_stagnation=0,
    )


def distance_matrix(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def knn_neighborhoods(
    population: Population,
    k: int,
    dmat: np.ndarray | None = None,
) -> Neighborhoods:
    """Euclidean k-nearest neighbors per individual, self excluded.

    Distance ties break toward the lower index. Neighborhood ranks sort on
    the best member objective, descending, rank 0 best, ties by index.
    """
    n = population.size
    if k >= n:
        raise InvalidConfigError(f"k={k} must be smaller than the population size {n}")
    if dmat is None:
        dmat = distance_matrix(population.positions)
    d = dmat.copy()
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    indices = order[:, :k]
    member_objs = population.objectives[indices]
    best_slot = np.argmax(member_objs, axis=1)
    best_member = indices[np.arange(n), best_slot]
    best_objs = member_objs[np.arange(n), best_slot]
    by_quality = np.argsort(-best_objs, kind="stable")
    rank = np.empty(n, dtype=int)
    rank[by_quality] = np.arange(n)
    return Neighborhoods(indices=indices, best_member=best_member, rank=rank, k=k)


def _indices_from_keys(keys: np.ndarray, count: int,
                       exclude: int | None = None) -> np.ndarray:
    """Distinct uniform indices: argsort of iid uniform keys is a random
    permutation; excluding an index pushes its key past every other."""
    if exclude is not None:
        keys = keys.copy()
        keys[exclude] = np.inf
    return np.argsort(keys, kind="stable")[:count]


def _draw_rows(rng: np.random.Generator, d: int, k: int, n: int):
    """Randomness consumed by one individual's mutation, in a fixed order
    independent of the chosen strategy."""
    gauss = rng.standard_normal(d)
    nb_keys = rng.random(k)
    pop_keys = rng.random(n)
    j_key = rng.random()
    return gauss, nb_keys, pop_keys, j_key


def _mutant_from_draws(
    i: int,
    action: int,
    x: np.ndarray,
    neighborhoods: Neighborhoods,
    f_scale: float,
    sigma: np.ndarray,
    gauss: np.ndarray,
    nb_pick: np.ndarray,
    pop_pick: np.ndarray,
    j_key: float,
) -> np.ndarray:
    """The five strategy formulas over pre-resolved randomness for one row.

    `nb_pick` / `pop_pick` hold distinct random slot / individual indices
    (the latter excluding i); `gauss` a standard-normal vector.
    """
    xi = x[i]
    nb = neighborhoods.indices[i]
    if action == 1:
        return xi + gauss * sigma
    if action == 2:
        r1, r2 = nb[nb_pick[0]], nb[nb_pick[1]]
        best = x[neighborhoods.best_member[i]]
        return xi + f_scale * (best - xi) + f_scale * (x[r1] - x[r2])
    if action == 3:
        if neighborhoods.k < 3:
            raise InvalidConfigError("strategy 3 needs neighborhoods of size k >= 3")
        r1, r2, r3 = nb[nb_pick[:3]]
        return x[r1] + f_scale * (x[r2] - x[r3])
    if action == 4:
        n = len(x)
        j = int(j_key * (n - 1))
        if j >= i:
            j += 1
        best = x[neighborhoods.best_member[j]]
        return xi + f_scale * (best - xi) + f_scale * (x[pop_pick[0]] - x[pop_pick[1]])
    if action == 5:
        return x[pop_pick[0]] + f_scale * (x[pop_pick[1]] - x[pop_pick[2]])
    raise InvalidConfigError(f"unknown strategy {action}; expected 1..5")


def mutate(
    i: int,
    action: int,
    population: Population,
    neighborhoods: Neighborhoods,
    f_scale: float,
    sigma: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mutant vector for individual i under the selected strategy 1..5.

    All random donor indices are distinct within a formula and never equal i.
    The rng is consumed in the fixed order of `_draw_rows` regardless of the
    strategy, so replaying the draws is strategy-independent.
    """
    gauss, nb_keys, pop_keys, j_key = _draw_rows(
        rng, population.positions.shape[1], neighborhoods.k, population.size)
    nb_pick = _indices_from_keys(nb_keys, 3)
    pop_pick = _indices_from_keys(pop_keys, 3, exclude=i)
    return _mutant_from_draws(i, action, population.positions, neighborhoods,
                              f_scale, sigma, gauss, nb_pick, pop_pick, j_key)


def _crossover_from_draws(parent: np.ndarray, mutant: np.ndarray, cr: float,
                          u: np.ndarray, forced: int) -> np.ndarray:
    mask = u < cr
    mask[forced] = True
    return np.where(mask, mutant, parent)


def crossover(parent: np.ndarray, mutant: np.ndarray, cr: float,
              rng: np.random.Generator) -> np.ndarray:
    """Binomial crossover with one dimension forced from the mutant."""
    if not 0.0 <= cr <= 1.0:
        raise InvalidConfigError(f"crossover rate must be in [0, 1], got {cr}")
    d = len(parent)
    return _crossover_from_draws(parent, mutant, cr, rng.random(d),
                                 int(rng.integers(d)))


def repair_bounds(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Reflect each violated coordinate across its bound once, then clamp."""
    y = np.asarray(x, dtype=float).copy()
    low = y < lower
    y[low] = (2.0 * lower - y)[low]
    high = y > upper
    y[high] = (2.0 * upper - y)[high]
    return np.clip(y, lower, upper)


@dataclass
class StepParams:
    f_scale: float = 0.5
    cr: float = 0.9
    # local-search sigma as a fraction of the per-dimension range, annealed
    # geometrically from `sigma_fraction` to `sigma_final_fraction` across
    # the horizon so the Gaussian strategy can finish the convergence it is
    # meant to provide
    sigma_fraction: float = 0.01
    sigma_final_fraction: float = 1e-5
    use_crossover: bool = True
    # "crowding": a trial replaces the nearest population member it matches
    # or beats, which keeps every occupied basin occupied; "parentwise" is
    # plain one-to-one replacement and can drain small niches
    selection: str = "crowding"

    def sigma_at(self, generation: int, horizon: int, span: np.ndarray) -> np.ndarray:
        if self.sigma_final_fraction >= self.sigma_fraction:
            return self.sigma_fraction * span
        frac = min(generation / max(horizon, 1), 1.0)
        scale = self.sigma_fraction * (self.sigma_final_fraction
                                       / self.sigma_fraction) ** frac
        return scale * span


def step(
    population: Population,
    actions: np.ndarray,
    params: StepParams,
    neighborhoods: Neighborhoods | None = None,
    archive: PeakArchive | None = None,
    max_fes: int | None = None,
) -> tuple[Population, int]:
    """Advance one generation; returns the new population and NP evals used."""
    n = population.size
    actions = np.asarray(actions)
    if actions.shape != (n,):
        raise InvalidConfigError(f"need {n} actions, got shape {actions.shape}")
    if max_fes is not None and population.evals_used + n > max_fes:
        raise BudgetExhaustedError(
            f"generation needs {n} evaluations, only "
            f"{max_fes - population.evals_used} left of {max_fes}")
    problem = population.problem
    if neighborhoods is None:
        neighborhoods = knn_neighborhoods(population, k=4)
    lower, upper = problem.lower, problem.upper
    sigma = params.sigma_at(population.generation, population.horizon,
                            upper - lower)

    # one stream per generation; row i of each block belongs to individual i,
    # so results do not depend on per-individual processing order
    rng = derive_rng(population.seed, _KEY_STEP, population.generation)
    d = population.positions.shape[1]
    gauss = rng.standard_normal((n, d))
    nb_keys = rng.random((n, neighborhoods.k))
    pop_keys = rng.random((n, n))
    j_keys = rng.random(n)
    cr_u = rng.random((n, d))
    forced = rng.integers(d, size=n)

    nb_picks = np.argsort(nb_keys, axis=1, kind="stable")[:, :3]
    pop_keys[np.arange(n), np.arange(n)] = np.inf  # donors never equal i
    pop_picks = np.argsort(pop_keys, axis=1, kind="stable")[:, :3]

    x = population.positions
    trials = np.empty_like(x)
    for i in range(n):
        mutant = _mutant_from_draws(
            i, int(actions[i]), x, neighborhoods, params.f_scale, sigma,
            gauss[i], nb_picks[i], pop_picks[i], j_keys[i])
        if params.use_crossover and actions[i] != GAUSSIAN_LOCAL:
            mutant = _crossover_from_draws(x[i], mutant, params.cr,
                                           cr_u[i], int(forced[i]))
        trials[i] = mutant
    trials = repair_bounds(trials, lower, upper)

    trial_objs = problem.evaluate_many(trials)
    if archive is not None:
        archive.offer_many(trials, trial_objs)

    if params.selection == "crowding":
        # classic crowding: trials processed in index order against the
        # incrementally updated population, each competing with its nearest
        # member so improvements stay inside their own basin
        new_positions = population.positions.copy()
        new_objectives = population.objectives.copy()
        replaced = np.zeros(n, dtype=bool)
        for i in range(n):
            diff = new_positions - trials[i]
            j = int(np.argmin(np.einsum("nd,nd->n", diff, diff)))
            if trial_objs[i] >= new_objectives[j]:
                new_positions[j] = trials[i]
                new_objectives[j] = trial_objs[i]
                replaced[j] = True
    elif params.selection == "parentwise":
        replaced = trial_objs >= population.objectives
        new_positions = np.where(replaced[:, None], trials, population.positions)
        new_objectives = np.where(replaced, trial_objs, population.objectives)
    else:
        raise InvalidConfigError(
            f"unknown selection {params.selection!r}; expected crowding|parentwise")
    new_stagnation = np.where(replaced, 0, population.stagnation + 1)

    # historical extremes and best track every evaluated point
    best_obj = population.best_objective
    best_pos = population.best_position
    global_stagnation = population.global_stagnation + 1
    trial_best = int(np.argmax(trial_objs))
    if trial_objs[trial_best] > best_obj:
        best_obj = float(trial_objs[trial_best])
        best_pos = trials[trial_best].copy()
        global_stagnation = 0
    worst_obj = min(population.worst_objective, float(trial_objs.min()))

    # neighborhood stagnation: anchored at i, reset on improvement of the
    # best objective within the current membership
    nbhd_best_now = new_objectives[neighborhoods.indices].max(axis=1)
    improved = nbhd_best_now > population.nbhd_prev_best
    nbhd_stagnation = np.where(improved, 0, population.nbhd_stagnation + 1)

    new_pop = replace(
        population,
        positions=new_positions,
        objectives=new_objectives,
        stagnation=new_stagnation,
        nbhd_stagnation=nbhd_stagnation,
        nbhd_prev_best=nbhd_best_now,
        generation=population.generation + 1,
        evals_used=population.evals_used + n,
        best_position=best_pos,
        best_objective=best_obj,
        worst_objective=worst_obj,
        global_stagnation=global_stagnation,
    )
    return new_pop, n
