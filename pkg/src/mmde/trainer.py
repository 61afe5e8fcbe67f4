"""Meta-level training and evaluation.

A rollout runs one full optimization episode on a problem instance, recording
the per-generation state features, joint actions, rewards and critic values.
PPO consumes batches of rollouts: generalized advantage estimation over each
episode, then full-batch clipped-surrogate steps with Adam. Evaluation runs
greedy (or baseline) episodes and scores the per-run peak archives.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import clustering, policy
from .benchmark import Problem, make_problem
from .config import Config
from .evolution import (
    StepParams,
    derive_rng,
    distance_matrix,
    init_population,
    knn_neighborhoods,
    step,
)
from .features import extract_state
from .metrics import (
    ACCURACY_LEVELS,
    PeakArchive,
    RunResult,
    count_peaks,
    peak_ratio,
    score_archive,
    success_rate,
)

_KEY_ACTION = 2  # spawn-key tag for per-generation action sampling streams

_ACTION_SETS = {
    "full": np.array([True, True, True, True, True]),
    "An": np.array([True, True, True, False, False]),
    "Ag": np.array([True, False, False, True, True]),
    "null": np.array([True, False, False, False, False]),
}


class NumericError(RuntimeError):
    """Non-finite loss or diverged update."""


def action_mask_for(action_set: str) -> np.ndarray | None:
    if action_set == "full":
        return None
    if action_set not in _ACTION_SETS:
        raise ValueError(f"unknown action set {action_set!r}")
    return _ACTION_SETS[action_set]


def derive_int_seed(*parts: int) -> int:
    ss = np.random.SeedSequence(entropy=tuple(int(p) for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# Strategy policies.
# ---------------------------------------------------------------------------

class NetworkPolicy:
    """Actor-critic policy; samples during training, argmax at inference."""

    needs_state = True

    def __init__(self, params: policy.PolicyParams, config: Config, greedy: bool = False):
        self.params = params
        self.greedy = greedy
        self.action_mask = action_mask_for(config.action_set)
        self.attn_residual = config.attn_residual

    def decide(self, state, rng) -> policy.Decision:
        return policy.decide(
            self.params, state.f_pop, state.f_ind,
            rng=rng, greedy_mode=self.greedy,
            action_mask=self.action_mask, attn_residual=self.attn_residual)


class RandomPolicy:
    """Uniform choice over the allowed strategies; baseline."""

    needs_state = False

    def __init__(self, config: Config):
        mask = action_mask_for(config.action_set)
        self.allowed = (np.flatnonzero(mask) + 1 if mask is not None
                        else np.arange(1, policy.N_ACTIONS + 1))

    def decide(self, n: int, rng) -> np.ndarray:
        return self.allowed[rng.integers(len(self.allowed), size=n)]


class FixedPolicy:
    """A single strategy for every individual every generation."""

    needs_state = False

    def __init__(self, action: int):
        if not 1 <= action <= policy.N_ACTIONS:
            raise ValueError(f"fixed strategy must be 1..{policy.N_ACTIONS}, got {action}")
        self.action = action

    def decide(self, n: int, rng) -> np.ndarray:
        return np.full(n, self.action, dtype=int)


# ---------------------------------------------------------------------------
# Episodes.
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Everything the PPO update needs from one episode."""

    problem_id: int
    seed: int
    f_pop: np.ndarray          # (T, NP, 10)
    f_ind: np.ndarray          # (T, NP, 12)
    actions: np.ndarray        # (T, NP) strategies 1..5
    log_probs: np.ndarray      # (T, NP) per-individual log-probabilities
    rewards: np.ndarray        # (T,)
    values: np.ndarray         # (T,) critic state values
    cluster_counts: np.ndarray  # (T,)
    best_objectives: np.ndarray  # (T,)

    @property
    def length(self) -> int:
        return len(self.rewards)


@dataclass
class EpisodeResult:
    trajectory: Trajectory | None
    archive: PeakArchive | None
    final_positions: np.ndarray
    final_objectives: np.ndarray
    evals_used: int


def _step_reward(config: Config, pop, labels) -> float:
    if config.reward == "b":
        return clustering.reward_b(pop.objectives)
    if config.reward == "c":
        return clustering.reward_c(labels, config.noise_as_singleton)
    normalizer = None
    if config.reward_norm:
        normalizer = (pop.worst_objective, pop.best_objective)
    return clustering.reward_clb(pop.objectives, labels,
                                 config.noise_as_singleton, normalizer)


def run_episode(
    problem: Problem,
    strategy_policy,
    config: Config,
    seed: int,
    record: bool = True,
    track_archive: bool = True,
    dump_path: Path | None = None,
    feature_writer=None,
) -> EpisodeResult:
    """One full optimization episode within the evaluation budget."""
    archive = PeakArchive(problem) if track_archive else None
    pop = init_population(problem, config.np_size, seed,
                          k=config.k_neighbors, horizon=config.horizon(),
                          archive=archive)
    horizon = pop.horizon
    params = StepParams(f_scale=config.f_scale, cr=config.cr,
                        sigma_fraction=config.sigma_fraction,
                        sigma_final_fraction=config.sigma_final_fraction,
                        use_crossover=config.crossover,
                        selection=config.selection)
    needs_state = strategy_policy.needs_state or feature_writer is not None
    needs_labels = record or dump_path is not None

    traj = None
    if record:
        n, t_max = config.np_size, horizon
        traj = Trajectory(
            problem_id=problem.id, seed=seed,
            f_pop=np.empty((t_max, n, 10)), f_ind=np.empty((t_max, n, 12)),
            actions=np.empty((t_max, n), dtype=int), log_probs=np.zeros((t_max, n)),
            rewards=np.empty(t_max), values=np.zeros(t_max),
            cluster_counts=np.empty(t_max, dtype=int),
            best_objectives=np.empty(t_max))

    dump_fh = open(dump_path, "w") if dump_path is not None else None
    try:
        for t in range(horizon):
            dmat = distance_matrix(pop.positions)
            nbh = knn_neighborhoods(pop, config.k_neighbors, dmat)
            state = None
            if needs_state:
                state = extract_state(pop, nbh, ablation=config.state_ablation, dmat=dmat)
                if feature_writer is not None:
                    feature_writer(t, state)
            rng = derive_rng(seed, _KEY_ACTION, t)
            if strategy_policy.needs_state:
                decision = strategy_policy.decide(state, rng)
                actions, log_prob = decision.actions, decision.log_prob_rows
                value = float(decision.values.mean())
            else:
                actions = strategy_policy.decide(pop.size, rng)
                log_prob, value = 0.0, 0.0
            pop, _ = step(pop, actions, params, neighborhoods=nbh,
                          archive=archive, max_fes=config.max_fes)
            labels = None
            if needs_labels:
                labels = clustering.cluster_population(
                    pop.positions, problem.lower, problem.upper,
                    config.dbscan_eps, config.dbscan_min_samples)
            if record:
                traj.f_pop[t] = state.f_pop if state is not None else 0.0
                traj.f_ind[t] = state.f_ind if state is not None else 0.0
                traj.actions[t] = actions
                traj.log_probs[t] = log_prob
                traj.values[t] = value
                traj.rewards[t] = _step_reward(config, pop, labels)
                traj.cluster_counts[t] = clustering.cluster_count(
                    labels, config.noise_as_singleton)
                traj.best_objectives[t] = pop.objectives.max()
            if dump_fh is not None:
                hist = np.bincount(actions, minlength=policy.N_ACTIONS + 1)[1:]
                dump_fh.write(json.dumps({
                    "generation": t + 1,
                    "best_objective": float(pop.objectives.max()),
                    "action_histogram": hist.tolist(),
                    "cluster_count": int(clustering.cluster_count(
                        labels, config.noise_as_singleton)),
                }) + "\n")
    finally:
        if dump_fh is not None:
            dump_fh.close()
    return EpisodeResult(trajectory=traj, archive=archive,
                         final_positions=pop.positions.copy(),
                         final_objectives=pop.objectives.copy(),
                         evals_used=pop.evals_used)


def rollout(problem: Problem, params: policy.PolicyParams, config: Config,
            seed: int) -> Trajectory:
    """Training episode with the sampling policy; records the full trajectory."""
    result = run_episode(problem, NetworkPolicy(params, config, greedy=False),
                         config, seed, record=True, track_archive=False)
    return result.trajectory


def _rollout_worker(args):
    problem, params, config, seed = args
    return rollout(problem, params, config, seed)


def batch_rollouts(problem: Problem, params: policy.PolicyParams, config: Config,
                   seeds: list[int]) -> list[Trajectory]:
    if config.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(seeds))) as pool:
            return list(pool.map(_rollout_worker,
                                 [(problem, params, config, s) for s in seeds]))
    return [rollout(problem, params, config, s) for s in seeds]


# ---------------------------------------------------------------------------
# PPO.
# ---------------------------------------------------------------------------

def compute_advantages(rewards: np.ndarray, values: np.ndarray, config: Config):
    """(advantages, returns) for one episode; terminal value is zero.

    PPO uses generalized advantage estimation; the a2c fallback uses plain
    one-step temporal-difference errors.
    """
    t_max = len(rewards)
    next_values = np.append(values[1:], 0.0)
    deltas = rewards + config.gamma * next_values - values
    if config.algo == "a2c":
        return deltas, rewards + config.gamma * next_values
    advantages = np.empty(t_max)
    acc = 0.0
    for t in range(t_max - 1, -1, -1):
        acc = deltas[t] + config.gamma * config.gae_lambda * acc
        advantages[t] = acc
    return advantages, advantages + values


class AdamState:
    def __init__(self, params: policy.PolicyParams):
        self.m = {n: np.zeros_like(t) for n, t in params.tensors()}
        self.v = {n: np.zeros_like(t) for n, t in params.tensors()}
        self.t = 0

    def update(self, params: policy.PolicyParams, grads: policy.PolicyParams,
               lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> policy.PolicyParams:
        self.t += 1
        out = {}
        for name, tensor in params.tensors():
            g = getattr(grads, name)
            self.m[name] = beta1 * self.m[name] + (1 - beta1) * g
            self.v[name] = beta2 * self.v[name] + (1 - beta2) * g * g
            m_hat = self.m[name] / (1 - beta1 ** self.t)
            v_hat = self.v[name] / (1 - beta2 ** self.t)
            out[name] = tensor - lr * m_hat / (np.sqrt(v_hat) + eps)
        return policy.PolicyParams(**out, seed=params.seed)


def clip_gradients(grads: policy.PolicyParams, max_norm: float) -> policy.PolicyParams:
    total = np.sqrt(sum(float(np.sum(t * t)) for _, t in grads.tensors()))
    if max_norm <= 0 or total <= max_norm:
        return grads
    scale = max_norm / total
    return policy.PolicyParams(
        **{n: t * scale for n, t in grads.tensors()}, seed=grads.seed)


def _loss_spec(config: Config) -> policy.LossSpec:
    return policy.LossSpec(
        clip_eps=config.clip_eps, value_coef=config.value_coef,
        entropy_coef=config.entropy_coef,
        action_mask=action_mask_for(config.action_set),
        attn_residual=config.attn_residual)


def ppo_update(
    params: policy.PolicyParams,
    trajectories: list[Trajectory],
    config: Config,
    lr: float | None = None,
    adam: AdamState | None = None,
):
    """Clipped-surrogate update over whole trajectories.

    Each inner epoch takes one full-batch gradient step over every recorded
    step of every trajectory (chunked to bound memory), so first-epoch
    probability ratios are exactly one for all samples.
    """
    if not trajectories:
        raise ValueError("ppo_update needs at least one trajectory")
    if lr is None:
        lr = config.lr_start
    if adam is None:
        adam = AdamState(params)
    spec = _loss_spec(config)

    adv_list, ret_list = [], []
    for traj in trajectories:
        adv, ret = compute_advantages(traj.rewards, traj.values, config)
        adv_list.append(adv)
        ret_list.append(ret)
    advantages = np.concatenate(adv_list)
    returns = np.concatenate(ret_list)
    # center always; rescale only when the spread is meaningful, so exact
    # zero-advantage batches stay exactly stationary instead of amplifying
    # rounding dust through the normalizer
    adv_std = advantages.std()
    advantages = advantages - advantages.mean()
    if adv_std > 1e-8:
        advantages = advantages / adv_std

    batch = policy.Batch(
        f_pop=np.concatenate([t.f_pop for t in trajectories]),
        f_ind=np.concatenate([t.f_ind for t in trajectories]),
        actions=np.concatenate([t.actions for t in trajectories]),
        old_log_prob=np.concatenate([t.log_probs for t in trajectories]),
        advantages=advantages,
        returns=returns,
    )
    total = len(batch.advantages)
    seg = max(1, config.segment_len)
    inner_epochs = 1 if config.algo == "a2c" else config.inner_epochs

    losses = []
    for inner in range(inner_epochs):
        grad_sum = {n: np.zeros_like(t) for n, t in params.tensors()}
        loss_sum = 0.0
        term_sums: dict[str, float] = {}
        for start in range(0, total, seg):
            sl = slice(start, min(start + seg, total))
            part = policy.Batch(batch.f_pop[sl], batch.f_ind[sl], batch.actions[sl],
                                batch.old_log_prob[sl], batch.advantages[sl],
                                batch.returns[sl])
            weight = (sl.stop - sl.start) / total
            loss, terms, grads = policy.backward(params, part, spec)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss in inner epoch {inner}, steps "
                    f"{sl.start}..{sl.stop} (trajectory of problem "
                    f"{trajectories[0].problem_id})")
            loss_sum += weight * loss
            for key, val in terms.items():
                term_sums[key] = term_sums.get(key, 0.0) + weight * val
            for name, _ in params.tensors():
                grad_sum[name] += weight * getattr(grads, name)
        grads = policy.PolicyParams(**grad_sum, seed=params.seed)
        grads = clip_gradients(grads, config.grad_clip)
        params = adam.update(params, grads, lr)
        term_sums["inner_epoch"] = inner
        losses.append(term_sums)
    return params, losses, adam


# ---------------------------------------------------------------------------
# Training loop.
# ---------------------------------------------------------------------------

def lr_at_epoch(config: Config, epoch: int) -> float:
    if config.epochs == 1:
        return config.lr_start
    frac = epoch / (config.epochs - 1)
    return config.lr_start + (config.lr_end - config.lr_start) * frac


def _checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:03d}.ckpt"


_OPT_MAGIC = b"MMDEOPT1\n"


def _save_adam(adam: AdamState, path: Path) -> None:
    names = sorted(adam.m)
    header = {"step": adam.t, "tensors": names}
    blob = b"".join(np.ascontiguousarray(adam.m[n], dtype="<f8").tobytes() for n in names)
    blob += b"".join(np.ascontiguousarray(adam.v[n], dtype="<f8").tobytes() for n in names)
    with open(path, "wb") as fh:
        fh.write(_OPT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def _load_adam(path: Path, params: policy.PolicyParams) -> AdamState:
    adam = AdamState(params)
    with open(path, "rb") as fh:
        if fh.read(len(_OPT_MAGIC)) != _OPT_MAGIC:
            raise policy.CheckpointError(f"{path}: not an optimizer state file")
        header = json.loads(fh.readline().decode())
        blob = fh.read()
    adam.t = int(header["step"])
    offset = 0
    for target in (adam.m, adam.v):
        for name in header["tensors"]:
            size = target[name].size * 8
            target[name] = np.frombuffer(
                blob[offset:offset + size], dtype="<f8").reshape(target[name].shape).copy()
            offset += size
    return adam


def train(
    config: Config,
    train_ids: list[int],
    out_dir: Path,
    data_source: Path | None = None,
    resume: bool = False,
    log=None,
) -> Path:
    """Full training run; returns the path of the last checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_path = out_dir / "curve.csv"
    latest_path = out_dir / "latest"

    params = policy.init_params(config.seed)
    adam = AdamState(params)
    start_epoch = 0
    if resume and latest_path.exists():
        last = out_dir / latest_path.read_text().strip()
        params = policy.load_params(last)
        opt_path = last.with_suffix(".opt")
        if opt_path.exists():
            adam = _load_adam(opt_path, params)
        start_epoch = int(last.stem.split("_")[1]) + 1

    problems = {pid: make_problem(pid, data_source) for pid in train_ids}
    mode = "a" if (resume and start_epoch > 0 and curve_path.exists()) else "w"
    with open(curve_path, mode, newline="") as curve_fh:
        writer = csv.writer(curve_fh)
        if mode == "w":
            writer.writerow(["epoch", "problem", "mean_reward",
                             "mean_cluster_count", "mean_best_objective"])
        for epoch in range(start_epoch, config.epochs):
            lr = lr_at_epoch(config, epoch)
            order = list(train_ids)
            if config.shuffle_problems:
                derive_rng(config.seed, 3, epoch).shuffle(order)
            for pid in order:
                seeds = [derive_int_seed(config.seed, epoch, pid, b)
                         for b in range(config.batch_size)]
                trajectories = batch_rollouts(problems[pid], params, config, seeds)
                params, losses, adam = ppo_update(params, trajectories, config, lr, adam)
                writer.writerow([
                    epoch, f"F{pid}",
                    repr(float(np.mean([t.rewards.mean() for t in trajectories]))),
                    repr(float(np.mean([t.cluster_counts.mean() for t in trajectories]))),
                    repr(float(np.mean([t.best_objectives[-1] for t in trajectories]))),
                ])
                if log is not None:
                    log(f"epoch {epoch} F{pid} lr={lr:.2e} "
                        f"loss={losses[-1]['loss']:.4f} "
                        f"reward={np.mean([t.rewards.mean() for t in trajectories]):.4f}")
            ckpt = out_dir / _checkpoint_name(epoch)
            policy.save_params(params, ckpt)
            _save_adam(adam, ckpt.with_suffix(".opt"))
            latest_path.write_text(ckpt.name + "\n")
    return out_dir / _checkpoint_name(config.epochs - 1)


# ---------------------------------------------------------------------------
# Evaluation.
# ---------------------------------------------------------------------------

def make_strategy_policy(spec: str, config: Config,
                         params: policy.PolicyParams | None = None,
                         greedy: bool = True):
    """'network', 'random' or 'fixed:A<n>' policy provider."""
    if spec == "network":
        if params is None:
            raise ValueError("network policy needs parameters")
        return NetworkPolicy(params, config, greedy=greedy)
    if spec == "random":
        return RandomPolicy(config)
    if spec.startswith("fixed:"):
        label = spec.split(":", 1)[1].strip().upper()
        if not label.startswith("A"):
            raise ValueError(f"fixed policy must name a strategy like A5, got {label!r}")
        return FixedPolicy(int(label[1:]))
    raise ValueError(f"unknown policy spec {spec!r}")


def evaluate_problem(
    problem: Problem,
    strategy_policy,
    config: Config,
    n_runs: int,
    accuracies=ACCURACY_LEVELS,
    seed: int | None = None,
) -> list[RunResult]:
    if seed is None:
        seed = config.seed
    results = []
    for run in range(n_runs):
        run_seed = derive_int_seed(seed, problem.id, run)
        episode = run_episode(problem, strategy_policy, config, run_seed,
                              record=False, track_archive=True)
        if config.count_from == "final_pop":
            npf = {acc: count_peaks(episode.final_positions,
                                    episode.final_objectives, problem, acc)
                   for acc in accuracies}
        else:
            npf = {acc: score_archive(episode.archive, accuracies)[acc]
                   for acc in accuracies}
        results.append(RunResult(problem_id=problem.id, seed=run_seed, npf=npf,
                                 evaluations=episode.evals_used))
    return results


def evaluate_policy(
    policy_spec: str,
    problem_ids: list[int],
    n_runs: int,
    accuracies,
    config: Config,
    params: policy.PolicyParams | None = None,
    data_source: Path | None = None,
    seed: int | None = None,
) -> dict:
    """PR/SR per problem per accuracy over independent runs."""
    rows = []
    runs_detail = []
    for pid in problem_ids:
        problem = make_problem(pid, data_source)
        strategy_policy = make_strategy_policy(policy_spec, config, params)
        results = evaluate_problem(problem, strategy_policy, config,
                                   n_runs, accuracies, seed)
        for acc in accuracies:
            rows.append({
                "problem": f"F{pid}",
                "accuracy": acc,
                "pr": peak_ratio(results, problem, acc),
                "sr": success_rate(results, problem, acc),
                "nr": n_runs,
            })
        runs_detail.extend(
            {"problem": f"F{pid}", "seed": r.seed, "evaluations": r.evaluations,
             "npf": {repr(float(a)): n for a, n in r.npf.items()}}
            for r in results)
    return {"rows": rows, "runs": runs_detail}
