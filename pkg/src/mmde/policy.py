"""Attention actor-critic over the population, in plain numpy.

Two tanh embedders lift the population-level (10) and individual-level (12)
features to 32 dims each; their concatenation is the 64-dim token for a
4-head self-attention block across the population; a linear actor head emits
one logit per search strategy and a linear critic head one value per token.

Forward, sampling and the exact analytic gradients of the clipped-surrogate
actor-critic loss are implemented directly so training does not depend on an
autodiff framework and checkpoints stay framework-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

D_POP = 10
D_IND = 12
D_EMBED = 32
D_MODEL = 64
N_HEADS = 4
D_HEAD = D_MODEL // N_HEADS
N_ACTIONS = 5

_MAGIC = b"MMDEPOL1\n"
_FORMAT_VERSION = 1
_MASK_FILL = -1e9


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


@dataclass
class PolicyParams:
    """All trainable tensors; field order defines the serialization order."""

    w_pe: np.ndarray
    b_pe: np.ndarray
    w_ie: np.ndarray
    b_ie: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    w_actor: np.ndarray
    b_actor: np.ndarray
    w_critic: np.ndarray
    b_critic: np.ndarray
    seed: int = -1

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)
                if f.name != "seed"]

    def count(self) -> int:
        return sum(t.size for _, t in self.tensors())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([t.ravel() for _, t in self.tensors()])

    def from_vector(self, vec: np.ndarray) -> "PolicyParams":
        out = {}
        offset = 0
        for name, t in self.tensors():
            out[name] = vec[offset:offset + t.size].reshape(t.shape).copy()
            offset += t.size
        return PolicyParams(**out, seed=self.seed)

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{n: t.copy() for n, t in self.tensors()}, seed=self.seed)


def flat_view_params(params: PolicyParams) -> tuple[np.ndarray, PolicyParams]:
    """A flat copy of the parameters plus a PolicyParams whose tensors are
    views into it, so single coordinates can be perturbed in place (used by
    the finite-difference gradient checks)."""
    flat = params.to_vector()
    views = {}
    offset = 0
    for name, t in params.tensors():
        views[name] = flat[offset:offset + t.size].reshape(t.shape)
        offset += t.size
    return flat, PolicyParams(**views, seed=params.seed)


_SHAPES = {
    "w_pe": (D_POP, D_EMBED), "b_pe": (D_EMBED,),
    "w_ie": (D_IND, D_EMBED), "b_ie": (D_EMBED,),
    "w_q": (D_MODEL, D_MODEL), "w_k": (D_MODEL, D_MODEL),
    "w_v": (D_MODEL, D_MODEL), "w_o": (D_MODEL, D_MODEL),
    "w_actor": (D_MODEL, N_ACTIONS), "b_actor": (N_ACTIONS,),
    "w_critic": (D_MODEL, 1), "b_critic": (1,),
}


def init_params(seed: int) -> PolicyParams:
    """Fan-in-scaled uniform trunk weights, zero biases, and zero actor /
    critic heads, deterministic in seed.

    Zero output heads start the policy exactly uniform over strategies and
    the value estimates at zero, so an untrained policy behaves like the
    uniform-random baseline instead of inheriting an arbitrary strategy bias
    from the draw.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    out = {}
    for name, shape in _SHAPES.items():
        if name.startswith("b_") or name in ("w_actor", "w_critic"):
            out[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            out[name] = rng.uniform(-bound, bound, size=shape)
    return PolicyParams(**out, seed=seed)


def save_params(params: PolicyParams, path: Path) -> None:
    """Self-describing binary container; identical params give identical bytes."""
    header = {
        "format_version": _FORMAT_VERSION,
        "dtype": "<f8",
        "seed": params.seed,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.tensors()],
    }
    blob = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes()
                    for _, t in params.tensors())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        fh.write(blob)


def load_params(path: Path) -> PolicyParams:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a policy checkpoint")
        try:
            header = json.loads(fh.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
        if header.get("format_version") != _FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format_version {header.get('format_version')} unsupported")
        blob = fh.read()
    out = {}
    offset = 0
    for entry in header.get("tensors", []):
        name, shape = entry.get("name"), tuple(entry.get("shape", ()))
        if name not in _SHAPES:
            raise CheckpointError(f"{path}: unknown tensor field {name!r}")
        if shape != _SHAPES[name]:
            raise CheckpointError(
                f"{path}: tensor {name} has shape {shape}, expected {_SHAPES[name]}")
        nbytes = int(np.prod(shape)) * 8
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated data for tensor {name}")
        out[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    missing = set(_SHAPES) - set(out)
    if missing:
        raise CheckpointError(f"{path}: missing tensor fields {sorted(missing)}")
    return PolicyParams(**out, seed=int(header.get("seed", -1)))


# ---------------------------------------------------------------------------
# Forward pass.
# ---------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def _softmax_owned(z: np.ndarray) -> np.ndarray:
    """Softmax computed in place on an array the caller owns."""
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _split_heads(x: np.ndarray) -> np.ndarray:
    b, n, _ = x.shape
    return x.reshape(b, n, N_HEADS, D_HEAD).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, _, n, _ = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, D_MODEL)


def forward(
    params: PolicyParams,
    f_pop: np.ndarray,
    f_ind: np.ndarray,
    attn_residual: bool = False,
    need_cache: bool = False,
):
    """Logits (.., NP, 5) and values (.., NP) for a batch of population states.

    Accepts (NP, d) or (B, NP, d) feature arrays; the attention block mixes
    information across the NP individuals of each state.
    """
    squeeze = f_pop.ndim == 2
    if squeeze:
        f_pop, f_ind = f_pop[None], f_ind[None]
    if f_pop.shape[-1] != D_POP or f_ind.shape[-1] != D_IND:
        raise ValueError(
            f"feature widths must be ({D_POP}, {D_IND}), got "
            f"({f_pop.shape[-1]}, {f_ind.shape[-1]})")
    if f_pop.shape[:2] != f_ind.shape[:2]:
        raise ValueError(f"mismatched batch shapes {f_pop.shape} vs {f_ind.shape}")

    pe = np.tanh(f_pop @ params.w_pe + params.b_pe)
    ie = np.tanh(f_ind @ params.w_ie + params.b_ie)
    x0 = np.concatenate([pe, ie], axis=-1)

    qh = _split_heads(x0 @ params.w_q)
    kh = _split_heads(x0 @ params.w_k)
    vh = _split_heads(x0 @ params.w_v)
    scores = qh @ kh.transpose(0, 1, 3, 2)
    scores *= 1.0 / np.sqrt(D_HEAD)
    attn = _softmax_owned(scores)
    o_cat = _merge_heads(attn @ vh)
    h = o_cat @ params.w_o
    if attn_residual:
        h = h + x0

    logits = h @ params.w_actor + params.b_actor
    values = (h @ params.w_critic + params.b_critic)[..., 0]

    cache = None
    if need_cache:
        cache = {
            "f_pop": f_pop, "f_ind": f_ind, "pe": pe, "ie": ie, "x0": x0,
            "qh": qh, "kh": kh, "vh": vh, "attn": attn, "o_cat": o_cat, "h": h,
            "residual": attn_residual,
        }
    if squeeze:
        return logits[0], values[0], cache
    return logits, values, cache


def _backprop_network(params: PolicyParams, cache: dict,
                      dlogits: np.ndarray, dvalues: np.ndarray) -> PolicyParams:
    """Push loss gradients at (logits, values) back to every parameter."""
    h, o_cat, x0 = cache["h"], cache["o_cat"], cache["x0"]
    attn, qh, kh, vh = cache["attn"], cache["qh"], cache["kh"], cache["vh"]
    pe, ie = cache["pe"], cache["ie"]
    f_pop, f_ind = cache["f_pop"], cache["f_ind"]

    def flat2(t: np.ndarray) -> np.ndarray:
        return t.reshape(-1, t.shape[-1])

    g = {}
    g["w_actor"] = flat2(h).T @ flat2(dlogits)
    g["b_actor"] = dlogits.sum(axis=(0, 1))
    g["w_critic"] = flat2(h).T @ dvalues.reshape(-1, 1)
    g["b_critic"] = np.array([dvalues.sum()])
    dh = dlogits @ params.w_actor.T + dvalues[..., None] * params.w_critic[:, 0]

    g["w_o"] = flat2(o_cat).T @ flat2(dh)
    do = _split_heads(dh @ params.w_o.T)
    dx0 = dh if cache["residual"] else np.zeros_like(x0)

    dattn = do @ vh.transpose(0, 1, 3, 2)
    dvh = attn.transpose(0, 1, 3, 2) @ do
    # softmax backward, reusing the dattn buffer as dscores
    dattn -= (dattn * attn).sum(axis=-1, keepdims=True)
    dattn *= attn
    dattn *= 1.0 / np.sqrt(D_HEAD)
    dqh = dattn @ kh
    dkh = dattn.transpose(0, 1, 3, 2) @ qh

    dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
    g["w_q"] = flat2(x0).T @ flat2(dq)
    g["w_k"] = flat2(x0).T @ flat2(dk)
    g["w_v"] = flat2(x0).T @ flat2(dv)
    dx0 = dx0 + dq @ params.w_q.T + dk @ params.w_k.T + dv @ params.w_v.T

    dpe = dx0[..., :D_EMBED] * (1.0 - pe * pe)
    die = dx0[..., D_EMBED:] * (1.0 - ie * ie)
    g["w_pe"] = flat2(f_pop).T @ flat2(dpe)
    g["b_pe"] = dpe.sum(axis=(0, 1))
    g["w_ie"] = flat2(f_ind).T @ flat2(die)
    g["b_ie"] = die.sum(axis=(0, 1))
    return PolicyParams(**g, seed=params.seed)


# ---------------------------------------------------------------------------
# Action selection.
# ---------------------------------------------------------------------------

@dataclass
class Decision:
    """Strategy choices for a population state."""

    actions: np.ndarray        # (NP,) in 1..N_ACTIONS
    log_prob: float            # joint log-probability, sum over individuals
    log_prob_rows: np.ndarray  # (NP,) per-individual log-probabilities
    probs: np.ndarray          # (NP, N_ACTIONS)
    values: np.ndarray         # (NP,) critic outputs


def apply_action_mask(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Fill logits of disallowed strategies with a large negative constant."""
    if mask is None:
        return logits
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (N_ACTIONS,):
        raise ValueError(f"action mask must have shape ({N_ACTIONS},), got {mask.shape}")
    if not mask.any():
        raise ValueError("action mask disallows every strategy")
    return np.where(mask, logits, _MASK_FILL)


def sample(logits: np.ndarray, rng: np.random.Generator):
    """Draw one strategy per row.

    Returns (actions 1-based, per-row log-probabilities, probs). The rows are
    computed through the same log-softmax path the surrogate loss uses, so
    freshly recorded rollouts give probability ratios of exactly one on the
    first update pass.
    """
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    cum = probs.cumsum(axis=-1)
    u = rng.random(len(logits))
    idx = np.minimum((cum < u[:, None]).sum(axis=-1), N_ACTIONS - 1)
    logp_rows = logp_all[np.arange(len(logits)), idx]
    return idx + 1, logp_rows, probs


def greedy(logits: np.ndarray):
    """Per-row argmax (ties toward the lowest strategy id)."""
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    idx = np.argmax(logits, axis=-1)
    logp_rows = logp_all[np.arange(len(logits)), idx]
    return idx + 1, logp_rows, probs


def decide(
    params: PolicyParams,
    f_pop: np.ndarray,
    f_ind: np.ndarray,
    rng: np.random.Generator | None = None,
    greedy_mode: bool = False,
    action_mask: np.ndarray | None = None,
    attn_residual: bool = False,
) -> Decision:
    logits, values, _ = forward(params, f_pop, f_ind, attn_residual=attn_residual)
    logits = apply_action_mask(logits, action_mask)
    if greedy_mode:
        actions, logp_rows, probs = greedy(logits)
    else:
        if rng is None:
            raise ValueError("sampling requires an rng")
        actions, logp_rows, probs = sample(logits, rng)
    return Decision(actions=actions, log_prob=float(logp_rows.sum()),
                    log_prob_rows=logp_rows, probs=probs, values=values)


# ---------------------------------------------------------------------------
# Loss and exact gradients.
# ---------------------------------------------------------------------------

@dataclass
class LossSpec:
    """Weights and clipping for the joint-action actor-critic objective.

    The default objective is the clipped surrogate plus critic regression;
    an entropy bonus is available behind `entropy_coef` but off by default so
    zero advantages leave the actor exactly stationary.
    """

    clip_eps: float = 0.2
    actor_coef: float = 1.0
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    action_mask: np.ndarray | None = None
    attn_residual: bool = False


@dataclass
class Batch:
    """Rollout slice for one update: states with matched targets.

    Each individual's action is its own surrogate sample (per-row ratio);
    the advantage and return are per-state and shared across the rows.
    """

    f_pop: np.ndarray         # (B, NP, 10)
    f_ind: np.ndarray         # (B, NP, 12)
    actions: np.ndarray       # (B, NP) in 1..N_ACTIONS
    old_log_prob: np.ndarray  # (B, NP) per-individual
    advantages: np.ndarray    # (B,)
    returns: np.ndarray       # (B,)


def _loss_terms(params: PolicyParams, batch: Batch, spec: LossSpec,
                need_cache: bool, need_terms: bool = True):
    logits, values, cache = forward(
        params, batch.f_pop, batch.f_ind,
        attn_residual=spec.attn_residual, need_cache=need_cache)
    logits = apply_action_mask(logits, spec.action_mask)
    b, n, _ = logits.shape
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    idx = batch.actions - 1
    rows = np.arange(b)[:, None], np.arange(n)[None, :]
    new_logp = logp_all[rows[0], rows[1], idx]  # (B, NP)

    ratio = np.exp(new_logp - batch.old_log_prob)
    clipped = np.clip(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps)
    adv = batch.advantages[:, None]
    s1 = ratio * adv
    s2 = clipped * adv
    actor_loss = -np.minimum(s1, s2).mean()

    v_state = values.mean(axis=1)
    value_err = v_state - batch.returns
    value_loss = np.mean(value_err ** 2)

    ent_rows = -(probs * np.where(probs > 0, logp_all, 0.0)).sum(axis=-1)
    entropy = ent_rows.mean()

    loss = (spec.actor_coef * actor_loss + spec.value_coef * value_loss
            - spec.entropy_coef * entropy)
    terms = None
    if need_terms:
        terms = {
            "loss": float(loss), "actor_loss": float(actor_loss),
            "value_loss": float(value_loss), "entropy": float(entropy),
            "clip_fraction": float(np.mean(s2 < s1)),
            "mean_ratio": float(ratio.mean()),
        }
    internals = (logits, values, cache, probs, logp_all, ratio, s1, s2,
                 new_logp, v_state, value_err, ent_rows)
    return loss, terms, internals


def loss_value(params: PolicyParams, batch: Batch, spec: LossSpec) -> float:
    loss, _, _ = _loss_terms(params, batch, spec, need_cache=False, need_terms=False)
    return float(loss)


def backward(params: PolicyParams, batch: Batch, spec: LossSpec):
    """Scalar loss, diagnostics, and exact parameter gradients."""
    loss, terms, internals = _loss_terms(params, batch, spec, need_cache=True)
    (logits, values, cache, probs, logp_all, ratio, s1, s2,
     new_logp, v_state, value_err, ent_rows) = internals
    b, n, _ = logits.shape

    # actor: d(-mean min(s1, s2))/d new_logp; the unclipped branch wins ties
    use_unclipped = s1 <= s2
    dlogp = -(spec.actor_coef / (b * n)) * batch.advantages[:, None] * ratio * use_unclipped
    onehot = np.zeros_like(probs)
    onehot[np.arange(b)[:, None], np.arange(n)[None, :], batch.actions - 1] = 1.0
    dlogits = dlogp[..., None] * (onehot - probs)

    # entropy bonus (subtracted from the loss)
    dlogits += (spec.entropy_coef / (b * n)) * probs * (
        np.where(probs > 0, logp_all, 0.0) + ent_rows[..., None])

    # critic mean-squared error on the per-state mean value
    dvalues = np.broadcast_to(
        (spec.value_coef * 2.0 / (b * n)) * value_err[:, None], values.shape).copy()

    grads = _backprop_network(params, cache, dlogits, dvalues)
    return float(loss), terms, grads
