"""Actor-critic network tests: shapes, symmetry, sampling, serialization and
the finite-difference gradient oracle."""

import numpy as np
import pytest

from conftest import noised_params

from mmde import policy as P


def make_inputs(rng, n, b=None):
    if b is None:
        return rng.normal(size=(n, P.D_POP)), rng.normal(size=(n, P.D_IND))
    return rng.normal(size=(b, n, P.D_POP)), rng.normal(size=(b, n, P.D_IND))


def make_batch(params, rng, b=3, n=6, offsets=None):
    f_pop, f_ind = make_inputs(rng, n, b)
    logits, values, _ = P.forward(params, f_pop, f_ind)
    actions = np.empty((b, n), dtype=int)
    logps = np.empty((b, n))
    for i in range(b):
        a, lp_rows, _ = P.sample(logits[i], rng)
        actions[i] = a
        logps[i] = lp_rows
    if offsets is None:
        offsets = rng.uniform(-0.3, 0.3, size=(b, n))
    return P.Batch(f_pop, f_ind, actions, logps + offsets,
                   rng.normal(size=b), rng.normal(size=b))


def fd_gradient(params, batch, spec, coords, h=1e-5):
    flat, view = P.flat_view_params(params)
    out = np.empty(len(coords))
    for slot, j in enumerate(coords):
        orig = flat[j]
        flat[j] = orig + h
        up = P.loss_value(view, batch, spec)
        flat[j] = orig - h
        down = P.loss_value(view, batch, spec)
        flat[j] = orig
        out[slot] = (up - down) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Parameters and serialization.
# ---------------------------------------------------------------------------

def test_param_count_matches_closed_form():
    params = P.init_params(0)
    expect = (10 * 32 + 32) + (12 * 32 + 32) + 4 * 64 * 64 + (64 * 5 + 5) + (64 * 1 + 1)
    assert params.count() == expect == 17542


def test_init_deterministic():
    a, b = P.init_params(42), P.init_params(42)
    assert np.array_equal(a.to_vector(), b.to_vector())
    c = P.init_params(43)
    assert not np.array_equal(a.to_vector(), c.to_vector())


def test_save_load_round_trip_byte_identical(tmp_path):
    params = P.init_params(7)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    P.save_params(params, p1)
    loaded = P.load_params(p1)
    assert loaded.seed == 7
    assert np.array_equal(loaded.to_vector(), params.to_vector())
    P.save_params(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_corruption(tmp_path):
    path = tmp_path / "x.ckpt"
    P.save_params(P.init_params(0), path)
    raw = path.read_bytes()
    (tmp_path / "bad_magic.ckpt").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(P.CheckpointError):
        P.load_params(tmp_path / "bad_magic.ckpt")
    (tmp_path / "truncated.ckpt").write_bytes(raw[:-100])
    with pytest.raises(P.CheckpointError) as err:
        P.load_params(tmp_path / "truncated.ckpt")
    assert "truncated" in str(err.value)


def test_vector_round_trip():
    params = P.init_params(1)
    vec = params.to_vector()
    back = params.from_vector(vec + 1.0)
    assert np.allclose(back.to_vector(), vec + 1.0)
    assert back.w_pe.shape == (10, 32)


# ---------------------------------------------------------------------------
# Forward pass.
# ---------------------------------------------------------------------------

def test_forward_shapes():
    rng = np.random.default_rng(0)
    params = P.init_params(0)
    f_pop, f_ind = make_inputs(rng, 9)
    logits, values, _ = P.forward(params, f_pop, f_ind)
    assert logits.shape == (9, 5)
    assert values.shape == (9,)
    f_pop, f_ind = make_inputs(rng, 9, b=4)
    logits, values, _ = P.forward(params, f_pop, f_ind)
    assert logits.shape == (4, 9, 5)
    assert values.shape == (4, 9)


def test_forward_rejects_bad_widths():
    params = P.init_params(0)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        P.forward(params, rng.normal(size=(4, 11)), rng.normal(size=(4, 12)))


def test_single_individual_attention_is_linear_map():
    # softmax over a 1x1 score is exactly 1, so the attention output is the
    # value projection of the token, independent of q/k
    rng = np.random.default_rng(3)
    params = noised_params(5)
    f_pop, f_ind = make_inputs(rng, 1)
    logits, values, cache = P.forward(params, f_pop, f_ind, need_cache=True)
    x0 = cache["x0"]
    manual_h = (x0 @ params.w_v) @ params.w_o
    np.testing.assert_allclose(cache["h"], manual_h, atol=1e-12)
    params2 = params.copy()
    params2.w_q += rng.normal(size=params2.w_q.shape)
    logits2, values2, _ = P.forward(params2, f_pop, f_ind)
    np.testing.assert_allclose(logits2, logits, atol=1e-12)


def test_identical_rows_give_identical_outputs():
    rng = np.random.default_rng(4)
    params = noised_params(6)
    row_pop = rng.normal(size=P.D_POP)
    row_ind = rng.normal(size=P.D_IND)
    f_pop = np.tile(row_pop, (7, 1))
    f_ind = np.tile(row_ind, (7, 1))
    logits, values, _ = P.forward(params, f_pop, f_ind)
    assert np.allclose(logits, logits[0])
    assert np.allclose(values, values[0])


def test_permutation_equivariance():
    rng = np.random.default_rng(5)
    params = noised_params(8)
    f_pop, f_ind = make_inputs(rng, 12)
    logits, values, _ = P.forward(params, f_pop, f_ind)
    for _ in range(5):
        perm = rng.permutation(12)
        logits_p, values_p, _ = P.forward(params, f_pop[perm], f_ind[perm])
        np.testing.assert_allclose(logits_p, logits[perm], atol=1e-10)
        np.testing.assert_allclose(values_p, values[perm], atol=1e-10)


def test_forward_pure():
    rng = np.random.default_rng(6)
    params = P.init_params(9)
    f_pop, f_ind = make_inputs(rng, 5)
    a = P.forward(params, f_pop, f_ind)[0]
    b = P.forward(params, f_pop, f_ind)[0]
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Sampling.
# ---------------------------------------------------------------------------

def test_probability_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(7)
    params = noised_params(10)
    f_pop, f_ind = make_inputs(rng, 50)
    logits, _, _ = P.forward(params, f_pop, f_ind)
    _, _, probs = P.greedy(logits)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(probs > 0)


def test_uniform_probs_for_equal_logits():
    logits = np.zeros((3, 5))
    _, _, probs = P.greedy(logits)
    assert np.allclose(probs, 0.2)


def test_saturated_logit_dominates():
    logits = np.zeros((1, 5))
    logits[0, 2] = 20.0
    actions, _, probs = P.greedy(logits)
    assert actions[0] == 3
    assert probs[0, 2] > 0.999
    rng = np.random.default_rng(0)
    draws = [P.sample(logits, rng)[0][0] for _ in range(200)]
    assert np.mean(np.array(draws) == 3) > 0.99


def test_greedy_tie_breaks_to_lowest_action():
    logits = np.zeros((2, 5))
    actions, _, _ = P.greedy(logits)
    assert list(actions) == [1, 1]


def test_sampling_frequencies_match_softmax():
    rng = np.random.default_rng(11)
    logits_row = np.array([0.3, -0.8, 1.2, 0.0, -0.1])
    tiled = np.tile(logits_row, (100_000, 1))
    actions, _, probs = P.sample(tiled, rng)
    freq = np.bincount(actions, minlength=6)[1:] / len(actions)
    assert np.all(np.abs(freq - probs[0]) < 0.01)


def test_joint_log_prob_is_sum_of_rows():
    rng = np.random.default_rng(12)
    params = noised_params(11)
    f_pop, f_ind = make_inputs(rng, 8)
    state_rng = np.random.default_rng(3)
    decision = P.decide(params, f_pop, f_ind, rng=state_rng)
    manual = np.log(decision.probs[np.arange(8), decision.actions - 1]).sum()
    assert decision.log_prob == pytest.approx(manual, abs=1e-9)
    assert decision.log_prob == pytest.approx(decision.log_prob_rows.sum(), abs=1e-12)


def test_nonfinite_logits_rejected():
    bad = np.zeros((2, 5))
    bad[1, 3] = np.nan
    with pytest.raises(FloatingPointError):
        P.greedy(bad)
    with pytest.raises(FloatingPointError):
        P.sample(bad, np.random.default_rng(0))


def test_action_mask():
    logits = np.zeros((4, 5))
    masked = P.apply_action_mask(logits, np.array([True, False, False, False, True]))
    actions, _, probs = P.greedy(masked)
    assert np.allclose(probs[:, 1:4], 0.0)
    assert np.allclose(probs[:, [0, 4]].sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        P.apply_action_mask(logits, np.zeros(5, dtype=bool))


# ---------------------------------------------------------------------------
# Gradients.
# ---------------------------------------------------------------------------

def test_gradients_match_finite_differences_all_coordinates():
    rng = np.random.default_rng(100)
    worst = 0.0
    for trial in range(2):
        params = noised_params(200 + trial)
        batch = make_batch(params, rng)
        spec = P.LossSpec(entropy_coef=0.01)
        _, _, grads = P.backward(params, batch, spec)
        gvec = grads.to_vector()
        fd = fd_gradient(params, batch, spec, range(params.count()))
        rel = np.abs(gvec - fd) / (np.maximum(np.abs(gvec), np.abs(fd)) + 1e-6)
        worst = max(worst, rel.max())
    assert worst < 1e-4


def test_zero_critic_weight_zeroes_critic_grads():
    rng = np.random.default_rng(101)
    params = noised_params(300)
    batch = make_batch(params, rng)
    _, _, grads = P.backward(params, batch, P.LossSpec(value_coef=0.0))
    assert np.all(grads.w_critic == 0.0)
    assert np.all(grads.b_critic == 0.0)
    assert not np.all(grads.w_actor == 0.0)


def test_scaling_loss_scales_gradients():
    rng = np.random.default_rng(102)
    params = noised_params(301)
    batch = make_batch(params, rng)
    base = P.LossSpec(actor_coef=1.0, value_coef=0.5, entropy_coef=0.01)
    double = P.LossSpec(actor_coef=2.0, value_coef=1.0, entropy_coef=0.02)
    l1, _, g1 = P.backward(params, batch, base)
    l2, _, g2 = P.backward(params, batch, double)
    assert l2 == pytest.approx(2.0 * l1, rel=1e-12)
    np.testing.assert_allclose(g2.to_vector(), 2.0 * g1.to_vector(), rtol=1e-12)


def test_zero_advantages_zero_actor_gradient():
    rng = np.random.default_rng(103)
    params = noised_params(302)
    batch = make_batch(params, rng)
    batch.advantages[:] = 0.0
    _, _, grads = P.backward(params, batch, P.LossSpec(value_coef=0.0))
    assert np.max(np.abs(grads.to_vector())) == 0.0


def test_masked_actions_get_no_gradient():
    rng = np.random.default_rng(104)
    params = noised_params(303)
    mask = np.array([True, True, True, False, False])
    spec = P.LossSpec(action_mask=mask)
    f_pop, f_ind = make_inputs(rng, 6, b=2)
    logits, values, _ = P.forward(params, f_pop, f_ind)
    masked_logits = P.apply_action_mask(logits, mask)
    actions = np.empty((2, 6), dtype=int)
    logps = np.empty((2, 6))
    for i in range(2):
        a, lp_rows, _ = P.sample(masked_logits[i], rng)
        actions[i] = a
        logps[i] = lp_rows
    assert np.all(actions <= 3)
    batch = P.Batch(f_pop, f_ind, actions, logps, rng.normal(size=2), rng.normal(size=2))
    _, _, grads = P.backward(params, batch, spec)
    # actor columns for masked strategies receive exactly zero gradient
    assert np.all(grads.w_actor[:, 3:] == 0.0)
    assert np.all(grads.b_actor[3:] == 0.0)
    fd = fd_gradient(params, batch, spec, range(0, params.count(), 997))
    gv = grads.to_vector()[range(0, params.count(), 997)]
    rel = np.abs(gv - fd) / (np.maximum(np.abs(gv), np.abs(fd)) + 1e-6)
    assert rel.max() < 1e-4
