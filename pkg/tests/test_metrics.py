"""Peak counting, archive behavior and PR/SR arithmetic.

count_peaks is cross-checked against an exhaustive oracle that enumerates
every subset of the archive and reports the largest subset of qualifying,
mutually radius-separated solutions.
"""

from itertools import combinations

import numpy as np
import pytest

from mmde.benchmark import make_problem
from mmde.metrics import (
    ACCURACY_LEVELS,
    PeakArchive,
    RunResult,
    count_peaks,
    peak_ratio,
    success_rate,
)


def exhaustive_npf(positions, objectives, problem, accuracy):
    """Largest subset of qualifying solutions pairwise farther than r."""
    qualify = [i for i, obj in enumerate(objectives)
               if problem.peak_height - obj <= accuracy]
    best = 0
    for size in range(len(qualify), 0, -1):
        if size <= best:
            break
        for subset in combinations(qualify, size):
            ok = all(np.linalg.norm(positions[a] - positions[b]) > problem.niche_radius
                     for a, b in combinations(subset, 2))
            if ok:
                best = size
                break
        if best:
            break
    return min(best, problem.n_global_optima)


def test_count_two_separated_trap_optima():
    p = make_problem(1)
    pos = np.array([[0.0], [30.0]])
    obj = np.array([200.0, 200.0])
    assert count_peaks(pos, obj, p, 1e-4) == 2


def test_duplicates_within_radius_count_once():
    p = make_problem(1)
    pos = np.array([[0.0], [0.004]])
    obj = np.array([200.0, 199.99999])
    assert count_peaks(pos, obj, p, 1e-4) == 1


def test_count_empty_archive():
    p = make_problem(1)
    assert count_peaks(np.empty((0, 1)), np.empty(0), p, 1e-4) == 0


def test_count_matches_exhaustive_oracle_on_random_archives():
    # Archive points land within r/2 of a true optimum, like real archives:
    # same-basin points are then always within r of each other and
    # cross-basin points far apart, where greedy selection is optimal.
    p = make_problem(4)  # Himmelblau: 4 optima, r=0.01
    rng = np.random.default_rng(9)
    for trial in range(60):
        m = rng.integers(1, 15)
        centers = p.known_optima()[rng.integers(0, 4, size=m)]
        jitter = rng.normal(size=(m, 2))
        jitter *= (rng.uniform(0, 0.0049, size=m)
                   / np.linalg.norm(jitter, axis=1))[:, None]
        pos = centers + jitter
        obj = p.evaluate_many(pos)
        for acc in (1e-1, 1e-3, 1e-5):
            got = count_peaks(pos, obj, p, acc)
            want = exhaustive_npf(pos, obj, p, acc)
            assert got == want, f"trial {trial} acc {acc}: {got} != {want}"


def test_greedy_chain_semantics_pinned():
    # Three qualifying points with the best within r of the two others that
    # are themselves separated: the documented greedy rule keeps only the
    # best, it does not search for a larger non-greedy subset.
    p = make_problem(1)  # r = 0.01
    pos = np.array([[10.0], [10.006], [9.994]])
    obj = np.array([200.0, 199.999, 199.998])  # synthetic qualifying values
    assert count_peaks(pos, obj, p, 1e-1) == 1
    assert exhaustive_npf(pos, obj, p, 1e-1) == 2


def test_count_invariant_under_permutation():
    p = make_problem(4)
    rng = np.random.default_rng(5)
    pos = p.known_optima() + rng.normal(scale=0.002, size=(4, 2))
    obj = p.evaluate_many(pos)
    base = count_peaks(pos, obj, p, 1e-1)
    for _ in range(10):
        perm = rng.permutation(len(pos))
        assert count_peaks(pos[perm], obj[perm], p, 1e-1) == base


def test_npf_monotone_in_accuracy():
    p = make_problem(4)
    rng = np.random.default_rng(11)
    pos = np.vstack([p.known_optima() + rng.normal(scale=s, size=(4, 2))
                     for s in (1e-5, 1e-3, 2e-2)])
    obj = p.evaluate_many(pos)
    counts = [count_peaks(pos, obj, p, acc) for acc in ACCURACY_LEVELS]
    assert counts == sorted(counts, reverse=True)


# ---------------------------------------------------------------------------
# PeakArchive behavior.
# ---------------------------------------------------------------------------

def test_archive_rejects_far_from_peak():
    p = make_problem(1)
    a = PeakArchive(p)
    assert not a.offer(np.array([15.0]), 60.0)  # 140 below the peak
    assert a.offer(np.array([0.001]), 199.95)
    assert len(a) == 1


def test_archive_keeps_better_of_near_pair():
    p = make_problem(1)
    a = PeakArchive(p)
    a.offer(np.array([0.002]), 199.95)
    a.offer(np.array([0.0005]), 199.99)  # closer to the peak, within r
    assert len(a) == 1
    assert a.objectives[0] == 199.99
    # worse duplicate is dropped
    a.offer(np.array([0.0008]), 199.96)
    assert len(a) == 1
    assert a.objectives[0] == 199.99


def test_archive_capacity_bounded():
    p = make_problem(1)  # capacity 10 * 2 = 20
    a = PeakArchive(p)
    rng = np.random.default_rng(0)
    # many separated near-peak points along the first trap slope
    for i in range(200):
        x = np.array([rng.uniform(0.0, 0.00124)])
        a.offer(x, float(p.evaluate(x)))
    assert len(a) <= a.capacity
    assert np.all(p.peak_height - a.objectives <= 1e-1)


def test_archive_band_invariant():
    p = make_problem(10)
    a = PeakArchive(p)
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 1, size=(500, 2))
    a.offer_many(pts, p.evaluate_many(pts))
    assert np.all(p.peak_height - a.objectives <= 1e-1)


# ---------------------------------------------------------------------------
# PR / SR arithmetic.
# ---------------------------------------------------------------------------

def test_pr_sr_hand_computed():
    p = make_problem(4)  # NKP = 4
    runs = [RunResult(4, 0, {1e-4: 4}), RunResult(4, 1, {1e-4: 2})]
    assert peak_ratio(runs, p, 1e-4) == pytest.approx(0.75)
    assert success_rate(runs, p, 1e-4) == pytest.approx(0.5)


def test_pr_sr_all_found():
    p = make_problem(1)
    runs = [RunResult(1, s, {1e-4: 2}) for s in range(5)]
    assert peak_ratio(runs, p, 1e-4) == 1.0
    assert success_rate(runs, p, 1e-4) == 1.0


def test_pr_sr_nothing_found():
    p = make_problem(1)
    runs = [RunResult(1, s, {1e-4: 0}) for s in range(4)]
    assert peak_ratio(runs, p, 1e-4) == 0.0
    assert success_rate(runs, p, 1e-4) == 0.0


def test_sr_one_implies_pr_one():
    p = make_problem(10)
    rng = np.random.default_rng(7)
    for _ in range(200):
        nr = int(rng.integers(1, 8))
        runs = [RunResult(10, s, {1e-3: int(rng.integers(0, 13))}) for s in range(nr)]
        pr = peak_ratio(runs, p, 1e-3)
        sr = success_rate(runs, p, 1e-3)
        assert 0.0 <= pr <= 1.0 and 0.0 <= sr <= 1.0
        if sr == 1.0:
            assert pr == 1.0


def test_empty_results_rejected():
    p = make_problem(1)
    with pytest.raises(ValueError):
        peak_ratio([], p, 1e-4)
    with pytest.raises(ValueError):
        success_rate([], p, 1e-4)
