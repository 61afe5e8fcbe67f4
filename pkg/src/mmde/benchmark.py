"""CEC2013 multimodal benchmark suite.

Twenty maximization problems: eight simple functions (uneven trap, equal
maxima, uneven decreasing maxima, Himmelblau, six-hump camel back, Shubert,
Vincent, modified Rastrigin) and ten composition problems built from five
basic primitives under shift / stretch / rotation transforms.

All problems use the maximization convention: the global peaks sit at the
tabulated peak heights. Composition problems peak at exactly 0 at each of
their component shift points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "BenchmarkError",
    "UnknownProblemError",
    "DataFileError",
    "Problem",
    "CompositionSpec",
    "make_problem",
    "make_composition",
    "evaluate_composition",
    "primitive",
    "PRIMITIVE_NAMES",
    "PROBLEM_IDS",
    "TRAIN_IDS",
    "TEST_IDS",
    "random_rotation",
    "load_matrix_file",
]

# Seed for generated composition data (shifts / rotations) when no data
# directory is supplied. Changing it changes every composition landscape.
DATA_SEED = 20130


class BenchmarkError(ValueError):
    """Base error for benchmark construction and evaluation."""


class UnknownProblemError(BenchmarkError):
    """Problem id outside 1..20 or unknown primitive name."""


class DataFileError(BenchmarkError):
    """Malformed or inconsistent composition data file."""


# ---------------------------------------------------------------------------
# Simple functions (maximization form). All take (n, D) arrays, return (n,).
# ---------------------------------------------------------------------------

def five_uneven_peak_trap(x: np.ndarray) -> np.ndarray:
    x = x[:, 0]
    result = np.zeros_like(x)
    conds = [
        (x < 2.5, 80.0 * (2.5 - x)),
        ((x >= 2.5) & (x < 5.0), 64.0 * (x - 2.5)),
        ((x >= 5.0) & (x < 7.5), 64.0 * (7.5 - x)),
        ((x >= 7.5) & (x < 12.5), 28.0 * (x - 7.5)),
        ((x >= 12.5) & (x < 17.5), 28.0 * (17.5 - x)),
        ((x >= 17.5) & (x < 22.5), 32.0 * (x - 17.5)),
        ((x >= 22.5) & (x < 27.5), 32.0 * (27.5 - x)),
        (x >= 27.5, 80.0 * (x - 27.5)),
    ]
    for mask, vals in conds:
        result = np.where(mask, vals, result)
    return result


def equal_maxima(x: np.ndarray) -> np.ndarray:
    return np.sin(5.0 * np.pi * x[:, 0]) ** 6


def uneven_decreasing_maxima(x: np.ndarray) -> np.ndarray:
    x0 = x[:, 0]
    envelope = np.exp(-2.0 * np.log(2.0) * ((x0 - 0.08) / 0.854) ** 2)
    return envelope * np.sin(5.0 * np.pi * (x0 ** 0.75 - 0.05)) ** 6


def himmelblau(x: np.ndarray) -> np.ndarray:
    a, b = x[:, 0], x[:, 1]
    return 200.0 - (a * a + b - 11.0) ** 2 - (a + b * b - 7.0) ** 2


def six_hump_camel_back(x: np.ndarray) -> np.ndarray:
    a, b = x[:, 0], x[:, 1]
    a2, b2 = a * a, b * b
    return -((4.0 - 2.1 * a2 + a2 * a2 / 3.0) * a2 + a * b + (4.0 * b2 - 4.0) * b2)


def shubert(x: np.ndarray) -> np.ndarray:
    j = np.arange(1, 6, dtype=float)
    # per-dimension factor: sum_j j*cos((j+1)x + j)
    terms = j * np.cos((j + 1.0) * x[..., None] + j)
    return -np.prod(terms.sum(axis=-1), axis=-1)


def vincent(x: np.ndarray) -> np.ndarray:
    return np.mean(np.sin(10.0 * np.log(x)), axis=-1)


def modified_rastrigin_all(x: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    if d == 2:
        k = np.array([3.0, 4.0])
    elif d == 8:
        k = np.array([1, 2, 1, 2, 1, 3, 1, 4], dtype=float)
    elif d == 16:
        k = np.array([1, 1, 1, 2, 1, 1, 1, 2, 1, 1, 1, 3, 1, 1, 1, 4], dtype=float)
    else:
        raise BenchmarkError(f"modified rastrigin defined for D in (2, 8, 16), got {d}")
    return -np.sum(10.0 + 9.0 * np.cos(2.0 * np.pi * k * x), axis=-1)


# ---------------------------------------------------------------------------
# Composition primitives (minimization form, minimum 0 at the origin).
# ---------------------------------------------------------------------------

def sphere(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1)


def griewank(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    idx = np.sqrt(np.arange(1, d + 1, dtype=float))
    return np.sum(x * x, axis=-1) / 4000.0 - np.prod(np.cos(x / idx), axis=-1) + 1.0


def rastrigin(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x) + 10.0, axis=-1)


_W_ALPHA, _W_BETA, _W_KMAX = 0.5, 3.0, 20


def weierstrass(x: np.ndarray) -> np.ndarray:
    k = np.arange(_W_KMAX + 1, dtype=float)
    ak = _W_ALPHA ** k
    bk = 2.0 * np.pi * _W_BETA ** k
    inner = np.sum(ak * np.cos(bk * (x[..., None] + 0.5)), axis=-1)
    const = np.sum(ak * np.cos(bk * 0.5))
    return np.sum(inner, axis=-1) - x.shape[-1] * const


def _griewank_1d(t: np.ndarray) -> np.ndarray:
    return t * t / 4000.0 - np.cos(t) + 1.0


def _rosenbrock_pair(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 100.0 * (a * a - b) ** 2 + (a - 1.0) ** 2


def ef8f2(x: np.ndarray) -> np.ndarray:
    # Expanded Griewank-plus-Rosenbrock over the cyclic pairs, evaluated at
    # x+1 so its minimization-form zero sits at the origin like the other
    # primitives (required for composition peaks to land on the shifts).
    z = x + 1.0
    nxt = np.roll(z, -1, axis=-1)
    return np.sum(_griewank_1d(_rosenbrock_pair(z, nxt)), axis=-1)


_PRIMITIVES = {
    "sphere": sphere,
    "griewank": griewank,
    "rastrigin": rastrigin,
    "weierstrass": weierstrass,
    "ef8f2": ef8f2,
}

PRIMITIVE_NAMES = tuple(_PRIMITIVES)


def primitive(name: str, x: np.ndarray) -> float:
    """Raw minimization-form value of one composition primitive at a vector."""
    if name not in _PRIMITIVES:
        raise UnknownProblemError(f"unknown primitive {name!r}; expected one of {PRIMITIVE_NAMES}")
    x = np.asarray(x, dtype=float)
    return float(_PRIMITIVES[name](x[None, :])[0])


# ---------------------------------------------------------------------------
# Composition framework.
# ---------------------------------------------------------------------------

# (component function names, stretch lambdas, weight sigmas, rotated?)
_CF_RECIPES = {
    1: (
        ("griewank", "griewank", "weierstrass", "weierstrass", "sphere", "sphere"),
        (1.0, 1.0, 8.0, 8.0, 1.0 / 5.0, 1.0 / 5.0),
        (1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
        False,
    ),
    2: (
        ("rastrigin", "rastrigin", "weierstrass", "weierstrass",
         "griewank", "griewank", "sphere", "sphere"),
        (1.0, 1.0, 10.0, 10.0, 1.0 / 10.0, 1.0 / 10.0, 1.0 / 7.0, 1.0 / 7.0),
        (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
        False,
    ),
    3: (
        ("ef8f2", "ef8f2", "weierstrass", "weierstrass", "griewank", "griewank"),
        (1.0 / 4.0, 1.0 / 10.0, 2.0, 1.0, 2.0, 5.0),
        (1.0, 1.0, 2.0, 2.0, 2.0, 2.0),
        True,
    ),
    4: (
        ("rastrigin", "rastrigin", "ef8f2", "ef8f2",
         "weierstrass", "weierstrass", "griewank", "griewank"),
        (4.0, 1.0, 4.0, 1.0, 1.0 / 10.0, 1.0 / 5.0, 1.0 / 10.0, 1.0 / 40.0),
        (1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0),
        True,
    ),
}

_NORM_C = 2000.0  # per-component normalization target at the probe point


@dataclass(frozen=True)
class CompositionSpec:
    """Fully resolved composition landscape: shifts, transforms and weights."""

    shifts: np.ndarray          # (n, D) component optima
    lambdas: np.ndarray         # (n,) stretch factors
    rotations: np.ndarray       # (n, D, D) orthogonal transforms
    biases: np.ndarray          # (n,) per-component biases
    f_bias: float
    sigma_weights: np.ndarray   # (n,) weight bandwidths
    component_functions: tuple[str, ...]
    fmax: np.ndarray = field(default=None)  # (n,) normalizers, computed if None

    @property
    def n_components(self) -> int:
        return self.shifts.shape[0]

    @property
    def dimension(self) -> int:
        return self.shifts.shape[1]

    def __post_init__(self):
        n, d = self.shifts.shape
        if self.rotations.shape != (n, d, d):
            raise BenchmarkError(
                f"rotations shape {self.rotations.shape} inconsistent with {n} shifts of dim {d}")
        eye = np.eye(d)
        for i, m in enumerate(self.rotations):
            if np.max(np.abs(m.T @ m - eye)) >= 1e-9:
                raise BenchmarkError(f"rotation matrix {i} is not orthogonal within 1e-9")
        if self.fmax is None:
            probe = np.full(d, 5.0)
            fmax = np.empty(n)
            for i, name in enumerate(self.component_functions):
                z = (probe / self.lambdas[i]) @ self.rotations[i]
                fmax[i] = abs(_PRIMITIVES[name](z[None, :])[0])
            object.__setattr__(self, "fmax", fmax)


def _composition_weights(spec: CompositionSpec, x: np.ndarray) -> np.ndarray:
    # x: (n_points, D) -> (n_points, n_components)
    d = spec.dimension
    sq = np.sum((x[:, None, :] - spec.shifts[None, :, :]) ** 2, axis=-1)
    w = np.exp(-sq / (2.0 * d * spec.sigma_weights[None, :] ** 2))
    wmax = w.max(axis=1, keepdims=True)
    scaled = w * (1.0 - wmax ** 10)
    is_max = w == wmax
    # keep exactly one maximal weight per row (ties: first index)
    first_max = np.zeros_like(is_max)
    first_max[np.arange(len(w)), np.argmax(w, axis=1)] = True
    w = np.where(first_max, w, scaled)
    total = w.sum(axis=1, keepdims=True)
    uniform = np.full_like(w, 1.0 / spec.n_components)
    return np.where(total > 0.0, w / np.where(total > 0.0, total, 1.0), uniform)


def _evaluate_composition_many(spec: CompositionSpec, x: np.ndarray) -> np.ndarray:
    w = _composition_weights(spec, x)
    vals = np.empty_like(w)
    for i, name in enumerate(spec.component_functions):
        z = ((x - spec.shifts[i]) / spec.lambdas[i]) @ spec.rotations[i]
        vals[:, i] = _NORM_C * _PRIMITIVES[name](z) / spec.fmax[i] + spec.biases[i]
    # maximization convention: peaks at -f_bias - 0 = 0 when biases vanish
    return -(np.sum(w * vals, axis=1) + spec.f_bias)


def evaluate_composition(spec: CompositionSpec, x: np.ndarray) -> float:
    """Composition value (maximization form) at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dimension,):
        raise BenchmarkError(f"expected vector of length {spec.dimension}, got shape {x.shape}")
    return float(_evaluate_composition_many(spec, x[None, :])[0])


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix from the QR decomposition of a Gaussian draw."""
    if dim == 1:
        return np.ones((1, 1))
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q *= np.sign(np.diag(r))
    return q


def load_matrix_file(path: Path, rows: int, cols: int, what: str) -> np.ndarray:
    """Whitespace-separated reals, row-major, with an exact shape check."""
    try:
        flat = np.loadtxt(path, dtype=float).ravel()
    except OSError as exc:
        raise DataFileError(f"{what}: cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataFileError(f"{what}: non-numeric token in {path}: {exc}") from exc
    if flat.size != rows * cols:
        raise DataFileError(
            f"{what}: {path} holds {flat.size} values, expected {rows}x{cols}={rows * cols}")
    return flat.reshape(rows, cols)


def _generated_shifts(cf_index: int, dim: int, n: int, lower: float, upper: float) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=DATA_SEED, spawn_key=(cf_index, dim))))
    span = upper - lower
    lo, hi = lower + 0.1 * span, upper - 0.1 * span
    while True:
        shifts = rng.uniform(lo, hi, size=(n, dim))
        dists = np.linalg.norm(shifts[:, None, :] - shifts[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() > 1.0:
            return shifts


def make_composition(cf_index: int, dim: int, data_source: Path | None = None) -> CompositionSpec:
    """Build a composition landscape, loading official data when provided."""
    if cf_index not in _CF_RECIPES:
        raise UnknownProblemError(f"composition index {cf_index} not in 1..4")
    funcs, lambdas, sigmas, rotated = _CF_RECIPES[cf_index]
    n = len(funcs)
    if data_source is not None:
        base = Path(data_source)
        shifts = load_matrix_file(
            base / f"CF{cf_index}_opt_D{dim}.dat", n, dim, f"CF{cf_index} shifts")
        if np.any(shifts < -5.0) or np.any(shifts > 5.0):
            raise DataFileError(f"CF{cf_index} shifts: values outside [-5, 5] bounds")
        if rotated:
            stacked = load_matrix_file(
                base / f"CF{cf_index}_M_D{dim}.dat", n * dim, dim, f"CF{cf_index} rotations")
            rotations = stacked.reshape(n, dim, dim)
        else:
            rotations = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
    else:
        shifts = _generated_shifts(cf_index, dim, n, -5.0, 5.0)
        if rotated:
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(entropy=DATA_SEED, spawn_key=(cf_index, dim, 1))))
            rotations = np.stack([random_rotation(dim, rng) for _ in range(n)])
        else:
            rotations = np.broadcast_to(np.eye(dim), (n, dim, dim)).copy()
    return CompositionSpec(
        shifts=shifts,
        lambdas=np.asarray(lambdas, dtype=float),
        rotations=rotations,
        biases=np.zeros(n),
        f_bias=0.0,
        sigma_weights=np.asarray(sigmas, dtype=float),
        component_functions=funcs,
    )


# ---------------------------------------------------------------------------
# Problem metadata and construction.
# ---------------------------------------------------------------------------

# Peak heights refined beyond the tabulated print precision so that
# at-optimum checks and tight accuracy levels (1e-5) stay meaningful.
_PEAK_SHUBERT_2D = 186.73090883102398
_PEAK_SHUBERT_3D = 2709.093505572820
_PEAK_CAMEL = 1.031628453489877

# id -> (label, simple function or None, dim, bounds, r, peak, n_opt, cf_index)
_TABLE = {
    1: ("five_uneven_peak_trap", five_uneven_peak_trap, 1, (0.0, 30.0), 0.01, 200.0, 2, None),
    2: ("equal_maxima", equal_maxima, 1, (0.0, 1.0), 0.01, 1.0, 5, None),
    3: ("uneven_decreasing_maxima", uneven_decreasing_maxima, 1, (0.0, 1.0), 0.01, 1.0, 1, None),
    4: ("himmelblau", himmelblau, 2, (-6.0, 6.0), 0.01, 200.0, 4, None),
    5: ("six_hump_camel_back", six_hump_camel_back, 2,
        ((-1.9, 1.9), (-1.1, 1.1)), 0.5, _PEAK_CAMEL, 2, None),
    6: ("shubert_2d", shubert, 2, (-10.0, 10.0), 0.5, _PEAK_SHUBERT_2D, 18, None),
    7: ("vincent_2d", vincent, 2, (0.25, 10.0), 0.2, 1.0, 36, None),
    8: ("shubert_3d", shubert, 3, (-10.0, 10.0), 0.5, _PEAK_SHUBERT_3D, 81, None),
    9: ("vincent_3d", vincent, 3, (0.25, 10.0), 0.2, 1.0, 216, None),
    10: ("modified_rastrigin_2d", modified_rastrigin_all, 2, (0.0, 1.0), 0.01, -2.0, 12, None),
    11: ("composition_1_2d", None, 2, (-5.0, 5.0), 0.01, 0.0, 6, 1),
    12: ("composition_2_2d", None, 2, (-5.0, 5.0), 0.01, 0.0, 8, 2),
    13: ("composition_3_2d", None, 2, (-5.0, 5.0), 0.01, 0.0, 6, 3),
    14: ("composition_3_3d", None, 3, (-5.0, 5.0), 0.01, 0.0, 6, 3),
    15: ("composition_4_3d", None, 3, (-5.0, 5.0), 0.01, 0.0, 8, 4),
    16: ("composition_3_5d", None, 5, (-5.0, 5.0), 0.01, 0.0, 6, 3),
    17: ("composition_4_5d", None, 5, (-5.0, 5.0), 0.01, 0.0, 8, 4),
    18: ("composition_3_10d", None, 10, (-5.0, 5.0), 0.01, 0.0, 6, 3),
    19: ("composition_4_10d", None, 10, (-5.0, 5.0), 0.01, 0.0, 8, 4),
    20: ("composition_4_20d", None, 20, (-5.0, 5.0), 0.01, 0.0, 8, 4),
}

PROBLEM_IDS = tuple(sorted(_TABLE))
TRAIN_IDS = (1, 3, 4, 6, 8, 9, 10, 12, 13, 17, 19, 20)
TEST_IDS = (2, 5, 7, 11, 14, 15, 16, 18)

# Analytic optimizer locations where they are known in closed form or were
# pinned by high-precision numeric search (used by metadata tests and the
# acceptance suite; Shubert optima are checked via the separable factors).
_HIMMELBLAU_ROOTS = (
    (3.0, 2.0),
    (-2.805118086952745, 3.131312518250573),
    (-3.779310253377747, -3.283185991286170),
    (3.584428340330492, -1.848126526964404),
)
_CAMEL_ROOT = (0.089842011817429, -0.712656405622467)
_VINCENT_ROOTS_1D = tuple(
    math.exp((math.pi / 2.0 + 2.0 * math.pi * k) / 10.0) for k in range(-2, 4))
_F3_ARGMAX = 0.079699779612481


def _known_optima(pid: int, dim: int, spec: CompositionSpec | None) -> np.ndarray | None:
    if spec is not None:
        return spec.shifts.copy()
    if pid == 1:
        return np.array([[0.0], [30.0]])
    if pid == 2:
        return np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
    if pid == 3:
        return np.array([[_F3_ARGMAX]])
    if pid == 4:
        return np.array(_HIMMELBLAU_ROOTS)
    if pid == 5:
        r = np.array(_CAMEL_ROOT)
        return np.stack([r, -r])
    if pid in (7, 9):
        grids = np.meshgrid(*([np.array(_VINCENT_ROOTS_1D)] * dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)
    if pid == 10:
        xs = np.array([1.0, 3.0, 5.0]) / 6.0
        ys = np.array([1.0, 3.0, 5.0, 7.0]) / 8.0
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)
    return None  # Shubert optima are not enumerated here


@dataclass(frozen=True)
class Problem:
    """One benchmark instance: objective plus the metadata needed for scoring."""

    id: int
    name: str
    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    niche_radius: float
    peak_height: float
    n_global_optima: int
    kind: str  # "simple" | "composition"
    _simple: object = None
    _spec: CompositionSpec | None = None

    def __post_init__(self):
        if np.any(self.lower >= self.upper):
            raise BenchmarkError(f"problem {self.id}: bounds must satisfy lower < upper")

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def composition(self) -> CompositionSpec | None:
        return self._spec

    def evaluate(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise BenchmarkError(
                f"problem {self.id}: expected vector of length {self.dimension}, got {x.shape}")
        return float(self.evaluate_many(x[None, :])[0])

    def evaluate_many(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dimension:
            raise BenchmarkError(
                f"problem {self.id}: expected (n, {self.dimension}) array, got {x.shape}")
        if self._spec is not None:
            return _evaluate_composition_many(self._spec, x)
        return self._simple(x)

    def known_optima(self) -> np.ndarray | None:
        """(m, D) optimizer locations where analytically known, else None."""
        return _known_optima(self.id, self.dimension, self._spec)

    def metadata(self) -> dict:
        return {
            "problem": f"F{self.id}",
            "name": self.name,
            "dim": self.dimension,
            "r": self.niche_radius,
            "peak": self.peak_height,
            "optima": self.n_global_optima,
            "kind": self.kind,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }


def make_problem(problem_id: int, data_source: Path | None = None) -> Problem:
    """Construct benchmark problem 1..20.

    Composition shift/rotation data is loaded from `data_source` when given,
    otherwise generated from the fixed seed `DATA_SEED`.
    """
    try:
        pid = int(problem_id)
    except (TypeError, ValueError):
        raise UnknownProblemError(f"problem id must be an integer, got {problem_id!r}")
    if pid not in _TABLE:
        raise UnknownProblemError(f"problem id {pid} not in 1..20")
    name, fn, dim, bounds, r, peak, n_opt, cf_index = _TABLE[pid]
    if isinstance(bounds[0], tuple):
        lower = np.array([b[0] for b in bounds], dtype=float)
        upper = np.array([b[1] for b in bounds], dtype=float)
    else:
        lower = np.full(dim, bounds[0], dtype=float)
        upper = np.full(dim, bounds[1], dtype=float)
    spec = None
    if cf_index is not None:
        spec = make_composition(cf_index, dim, data_source)
        if np.any(spec.shifts < lower) or np.any(spec.shifts > upper):
            raise DataFileError(f"problem {pid}: composition shifts outside bounds")
    return Problem(
        id=pid,
        name=name,
        dimension=dim,
        lower=lower,
        upper=upper,
        niche_radius=r,
        peak_height=peak,
        n_global_optima=n_opt,
        kind="simple" if cf_index is None else "composition",
        _simple=fn,
        _spec=spec,
    )
