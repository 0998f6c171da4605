"""Proximal policy optimization over the waypoint MDP.

Actor and critic are two separate fully connected ReLU networks of the
same fixed topology. Forward and reverse passes are written directly in
numpy (float64 throughout), which keeps training bit-reproducible for a
given seed and lets the gradient be checked against finite differences.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonFiniteLoss
from .mdp import (EPISODE_LENGTH, N_ACTIONS, SamplerBounds, StateVector,
                  RewardConfig, TrainingEnv)

CHECKPOINT_FORMAT_VERSION = 1

DEFAULT_HIDDEN = (64, 64, 32, 32, 16, 16)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    actor_out: int = N_ACTIONS
    critic_out: int = 1

    def layer_dims(self, head: int) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, head]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9999
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    batch_size: int = 128
    rollout_horizon: int = 256
    n_envs: int = 8
    epochs: int = 10
    learning_rate: float = 3e-4
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 120_000
    checkpoint_every: int = 0          # updates; 0 = final only
    seed: int = 0
    n_max: int = 2

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class PolicyParams:
    """Actor + critic weights plus the fixed per-feature observation scale
    applied before the first layer."""

    actor: MlpParams
    critic: MlpParams
    obs_scale: np.ndarray

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.actor.copy(), self.critic.copy(),
                            self.obs_scale.copy())


def default_obs_scale(n_max: int = 2) -> np.ndarray:
    """Per-feature input scaling for raw RL-frame states in meters."""
    scale = [0.01, 0.1, 1.0, 0.1, 0.1]            # x_e, y_e, y_c_norm, edges
    scale += [1.0, 0.01, 0.1, 0.1] * n_max        # tr_p, x_tr, y_tr, v_tr
    return np.array(scale)


def _orthogonal(rng: np.random.Generator, shape: tuple[int, int],
                gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


def init_params(spec: MlpSpec, seed: int, n_max: int = 2,
                obs_scale: np.ndarray | None = None) -> PolicyParams:
    """Orthogonal initialization: sqrt(2) gain on hidden layers, small gain
    on the actor head so the initial policy is near uniform."""
    rng = np.random.default_rng(seed)
    nets = {}
    for name, head, head_gain in (("actor", spec.actor_out, 0.01),
                                  ("critic", spec.critic_out, 1.0)):
        weights, biases = [], []
        dims = spec.layer_dims(head)
        for i, (out_d, in_d) in enumerate(dims):
            gain = head_gain if i == len(dims) - 1 else np.sqrt(2.0)
            weights.append(_orthogonal(rng, (out_d, in_d), gain))
            biases.append(np.zeros(out_d))
        nets[name] = MlpParams(weights, biases)
    if obs_scale is None:
        obs_scale = (default_obs_scale(n_max)
                     if spec.input_dim == StateVector.width(n_max)
                     else np.ones(spec.input_dim))
    return PolicyParams(nets["actor"], nets["critic"], np.asarray(obs_scale))


def _mlp_forward(net: MlpParams, x: np.ndarray):
    """Returns (output, cache). x is (B, D)."""
    pre = []
    act = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        act.append(h)
    return h, (pre, act)


def _mlp_backward(net: MlpParams, cache, d_out: np.ndarray):
    """Backpropagate d_out (B, out) through the net; returns per-layer
    (dW, db) lists."""
    pre, act = cache
    d_ws = [None] * len(net.weights)
    d_bs = [None] * len(net.biases)
    grad = d_out
    for i in range(len(net.weights) - 1, -1, -1):
        if i != len(net.weights) - 1:
            grad = grad * (pre[i] > 0.0)
        d_ws[i] = grad.T @ act[i]
        d_bs[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ net.weights[i]
    return d_ws, d_bs


def _as_batch(states) -> np.ndarray:
    if isinstance(states, StateVector):
        return states.as_array()[None, :]
    arr = np.asarray(states, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(params: PolicyParams, states) -> tuple[np.ndarray, np.ndarray]:
    """Action distribution and value estimate for one state or a batch.

    Returns (probs, values): probs (B, N_ACTIONS) summing to 1 per row,
    values (B,). Pure and deterministic.
    """
    x = _as_batch(states) * params.obs_scale
    logits, _ = _mlp_forward(params.actor, x)
    values, _ = _mlp_forward(params.critic, x)
    probs = np.exp(_log_softmax(logits))
    return probs, values[:, 0]


def policy_logits(params: PolicyParams, states) -> np.ndarray:
    x = _as_batch(states) * params.obs_scale
    logits, _ = _mlp_forward(params.actor, x)
    return logits


def greedy_action(params: PolicyParams, state) -> int:
    return int(np.argmax(policy_logits(params, state)[0]))


def sample_actions(params: PolicyParams, states, rng: np.random.Generator):
    """Sample actions for a batch; returns (actions, log_probs, values)."""
    x = _as_batch(states) * params.obs_scale
    logits, _ = _mlp_forward(params.actor, x)
    values, _ = _mlp_forward(params.critic, x)
    logp_all = _log_softmax(logits)
    cum = np.cumsum(np.exp(logp_all), axis=1)
    u = rng.random(len(x))
    actions = (u[:, None] > cum).sum(axis=1)
    actions = np.minimum(actions, N_ACTIONS - 1)
    logp = logp_all[np.arange(len(x)), actions]
    return actions, logp, values[:, 0]


@dataclass
class RolloutBuffer:
    """Fixed-horizon on-policy storage, shaped (T, E) over E parallel
    environments, flattened for minibatching after GAE."""

    states: np.ndarray       # (T, E, D)
    actions: np.ndarray      # (T, E)
    log_probs: np.ndarray    # (T, E)
    values: np.ndarray       # (T, E)
    rewards: np.ndarray      # (T, E)
    dones: np.ndarray        # (T, E) episode ended at this transition
    last_values: np.ndarray  # (E,) bootstrap for non-terminal tails
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.states.shape[0] * self.states.shape[1]

    def flat(self):
        t, e, d = self.states.shape
        return (self.states.reshape(t * e, d), self.actions.reshape(-1),
                self.log_probs.reshape(-1), self.advantages.reshape(-1),
                self.returns.reshape(-1))


def compute_gae(buffer: RolloutBuffer, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over the buffer; fills and returns
    (advantages, returns). Terminal transitions cut the recursion."""
    t_len = buffer.rewards.shape[0]
    advantages = np.zeros_like(buffer.rewards)
    last_adv = np.zeros(buffer.rewards.shape[1])
    for t in range(t_len - 1, -1, -1):
        next_values = buffer.last_values if t == t_len - 1 else buffer.values[t + 1]
        non_terminal = 1.0 - buffer.dones[t]
        delta = (buffer.rewards[t] + gamma * next_values * non_terminal
                 - buffer.values[t])
        last_adv = delta + gamma * lam * non_terminal * last_adv
        advantages[t] = last_adv
    returns = advantages + buffer.values
    buffer.advantages = advantages
    buffer.returns = returns
    return advantages, returns


def ppo_loss_and_grads(params: PolicyParams, states: np.ndarray,
                       actions: np.ndarray, old_log_probs: np.ndarray,
                       advantages: np.ndarray, returns: np.ndarray,
                       config: TrainConfig):
    """Clipped-surrogate loss, diagnostics, and exact gradients for one
    minibatch. Returns (loss, stats, actor_grads, critic_grads)."""
    x = states * params.obs_scale
    batch = len(x)
    logits, actor_cache = _mlp_forward(params.actor, x)
    values, critic_cache = _mlp_forward(params.critic, x)
    values = values[:, 0]

    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(batch)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_log_probs)

    surr1 = ratio * advantages
    clipped_ratio = np.clip(ratio, 1.0 - config.clip_epsilon,
                            1.0 + config.clip_epsilon)
    surr2 = clipped_ratio * advantages
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    entropy = -np.sum(probs * logp_all, axis=1)
    value_err = values - returns
    value_loss = np.mean(value_err ** 2)
    loss = (policy_loss + config.vf_coef * value_loss
            - config.ent_coef * np.mean(entropy))

    # d loss / d logp: active only where the unclipped branch is the min
    active = surr1 <= surr2
    d_logp = -(active * ratio * advantages) / batch
    # d logp[a] / d logits = onehot - probs; entropy term adds
    # p * (logp + H) * ent_coef / B
    d_logits = d_logp[:, None] * (-probs)
    d_logits[rows, actions] += d_logp
    d_logits += (config.ent_coef / batch) * probs * (logp_all + entropy[:, None])

    d_values = (config.vf_coef * 2.0 / batch) * value_err

    actor_grads = _mlp_backward(params.actor, actor_cache, d_logits)
    critic_grads = _mlp_backward(params.critic, critic_cache,
                                 d_values[:, None])
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(np.mean(entropy)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_epsilon)),
    }
    return float(loss), stats, actor_grads, critic_grads


class Adam:
    def __init__(self, shapes: list[tuple], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            a -= self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)


def _clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        return [g * scale for g in grads]
    return grads


def ppo_update(params: PolicyParams, buffer: RolloutBuffer,
               config: TrainConfig, rng: np.random.Generator,
               optimizer: Adam | None = None,
               update_index: int = 0) -> tuple[PolicyParams, dict]:
    """Run `config.epochs` passes of minibatch clipped-surrogate updates
    over the buffer. Advantages are normalized once per update. Returns
    the updated params (same object, mutated in place via the optimizer)
    and averaged stats."""
    if buffer.advantages is None:
        compute_gae(buffer, config.gamma, config.gae_lambda)
    states, actions, old_logp, advantages, returns = buffer.flat()
    adv_std = advantages.std()
    advantages = (advantages - advantages.mean()) / (adv_std + 1e-8)

    arrays = params.actor.arrays() + params.critic.arrays()
    if optimizer is None:
        optimizer = Adam([a.shape for a in arrays], config.learning_rate)

    n = len(states)
    agg: dict[str, float] = {}
    batches = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            loss, stats, a_grads, c_grads = ppo_loss_and_grads(
                params, states[sel], actions[sel], old_logp[sel],
                advantages[sel], returns[sel], config)
            if not np.isfinite(loss):
                raise NonFiniteLoss(update_index, batches)
            grads = [*a_grads[0], *a_grads[1], *c_grads[0], *c_grads[1]]
            grads = _clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(arrays, grads)
            for key, val in stats.items():
                agg[key] = agg.get(key, 0.0) + val
            batches += 1
    stats = {k: v / max(batches, 1) for k, v in agg.items()}
    stats["n_minibatches"] = batches
    return params, stats


@dataclass
class PolicyCheckpoint:
    params: PolicyParams
    spec: MlpSpec
    config: TrainConfig
    step_counter: int
    format_version: int = CHECKPOINT_FORMAT_VERSION
    adam_state: dict | None = None


def save_checkpoint(ckpt: PolicyCheckpoint, path: str | Path) -> None:
    """Versioned .npz layout: a JSON metadata entry plus one flat float64
    array per weight/bias; round-trips bit-exactly."""
    meta = {
        "format_version": ckpt.format_version,
        "spec": {"input_dim": ckpt.spec.input_dim,
                 "hidden": list(ckpt.spec.hidden),
                 "actor_out": ckpt.spec.actor_out,
                 "critic_out": ckpt.spec.critic_out},
        "config": ckpt.config.as_dict(),
        "step_counter": ckpt.step_counter,
        "n_layers": len(ckpt.params.actor.weights),
        "has_adam": ckpt.adam_state is not None,
    }
    arrays = {"obs_scale": ckpt.params.obs_scale}
    for net_name, net in (("actor", ckpt.params.actor),
                          ("critic", ckpt.params.critic)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{net_name}_w{i}"] = w
            arrays[f"{net_name}_b{i}"] = b
    if ckpt.adam_state is not None:
        arrays.update({f"adam_m{i}": m for i, m in enumerate(ckpt.adam_state["m"])})
        arrays.update({f"adam_v{i}": v for i, v in enumerate(ckpt.adam_state["v"])})
        meta["adam_t"] = ckpt.adam_state["t"]
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **arrays)


def load_checkpoint(path: str | Path) -> PolicyCheckpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"unsupported checkpoint format {meta['format_version']}")
        spec = MlpSpec(input_dim=meta["spec"]["input_dim"],
                       hidden=tuple(meta["spec"]["hidden"]),
                       actor_out=meta["spec"]["actor_out"],
                       critic_out=meta["spec"]["critic_out"])
        config = TrainConfig(**meta["config"])
        nets = {}
        for net_name, head in (("actor", spec.actor_out),
                               ("critic", spec.critic_out)):
            weights, biases = [], []
            for i, (out_d, in_d) in enumerate(spec.layer_dims(head)):
                w = data[f"{net_name}_w{i}"]
                b = data[f"{net_name}_b{i}"]
                if w.shape != (out_d, in_d) or b.shape != (out_d,):
                    raise ValueError(
                        f"checkpoint shape mismatch in {net_name} layer {i}")
                weights.append(w)
                biases.append(b)
            nets[net_name] = MlpParams(weights, biases)
        params = PolicyParams(nets["actor"], nets["critic"], data["obs_scale"])
        adam_state = None
        if meta.get("has_adam"):
            n_arrays = len(params.actor.arrays() + params.critic.arrays())
            adam_state = {
                "m": [data[f"adam_m{i}"] for i in range(n_arrays)],
                "v": [data[f"adam_v{i}"] for i in range(n_arrays)],
                "t": meta["adam_t"],
            }
        return PolicyCheckpoint(params=params, spec=spec, config=config,
                                step_counter=meta["step_counter"],
                                adam_state=adam_state)


METRICS_CSV_HEADER = ["update", "step", "mean_episode_reward", "policy_loss",
                      "value_loss", "entropy", "clip_fraction"]


def train(config: TrainConfig, bounds: SamplerBounds | None = None,
          reward_config: RewardConfig | None = None,
          metrics_path: str | Path | None = None,
          checkpoint_path: str | Path | None = None,
          resume: PolicyCheckpoint | None = None,
          log_fn=None) -> PolicyCheckpoint:
    """Alternate rollout collection on teleport-dynamics environments and
    PPO updates until total_steps environment steps have been consumed.

    Fully seeded: the same config and seed reproduce the checkpoint
    bit-for-bit on one machine.
    """
    bounds = bounds or SamplerBounds(n_max=config.n_max)
    reward_config = reward_config or RewardConfig()
    spec = MlpSpec(input_dim=StateVector.width(config.n_max))

    seed_seq = np.random.SeedSequence(config.seed)
    env_seeds, sample_seed, update_seed = seed_seq.spawn(3)
    envs = [TrainingEnv(bounds, reward_config, seed=s)
            for s in env_seeds.generate_state(config.n_envs)]
    action_rng = np.random.default_rng(sample_seed)
    update_rng = np.random.default_rng(update_seed)

    if resume is not None:
        params = resume.params.copy()
        step_counter = resume.step_counter
    else:
        params = init_params(spec, seed=config.seed, n_max=config.n_max)
        step_counter = 0
    arrays = params.actor.arrays() + params.critic.arrays()
    optimizer = Adam([a.shape for a in arrays], config.learning_rate)
    if resume is not None and resume.adam_state is not None:
        optimizer.m = [m.copy() for m in resume.adam_state["m"]]
        optimizer.v = [v.copy() for v in resume.adam_state["v"]]
        optimizer.t = resume.adam_state["t"]

    obs = np.stack([env.reset().as_array() for env in envs])
    dim = StateVector.width(config.n_max)
    metrics_rows = []
    episode_returns = np.zeros(config.n_envs)
    update_index = 0
    steps_per_update = config.rollout_horizon * config.n_envs
    # total_steps counts this call; a resumed counter keeps rising past it
    target_steps = step_counter + config.total_steps

    while step_counter < target_steps:
        t_len = config.rollout_horizon
        buf = RolloutBuffer(
            states=np.zeros((t_len, config.n_envs, dim)),
            actions=np.zeros((t_len, config.n_envs), dtype=int),
            log_probs=np.zeros((t_len, config.n_envs)),
            values=np.zeros((t_len, config.n_envs)),
            rewards=np.zeros((t_len, config.n_envs)),
            dones=np.zeros((t_len, config.n_envs)),
            last_values=np.zeros(config.n_envs),
        )
        finished_returns = []
        for t in range(t_len):
            actions, logp, values = sample_actions(params, obs, action_rng)
            buf.states[t] = obs
            buf.actions[t] = actions
            buf.log_probs[t] = logp
            buf.values[t] = values
            for e, env in enumerate(envs):
                next_state, breakdown, done = env.step(int(actions[e]))
                buf.rewards[t, e] = breakdown.total
                buf.dones[t, e] = float(done)
                episode_returns[e] += breakdown.total
                if done:
                    finished_returns.append(episode_returns[e])
                    episode_returns[e] = 0.0
                    next_state = env.reset()
                obs[e] = next_state.as_array()
        _, buf.last_values = forward(params, obs)

        compute_gae(buf, config.gamma, config.gae_lambda)
        params, stats = ppo_update(params, buf, config, update_rng,
                                   optimizer, update_index)
        step_counter += steps_per_update
        update_index += 1
        mean_ep = float(np.mean(finished_returns)) if finished_returns else np.nan
        row = [update_index, step_counter, mean_ep, stats["policy_loss"],
               stats["value_loss"], stats["entropy"], stats["clip_fraction"]]
        metrics_rows.append(row)
        if log_fn is not None:
            log_fn(dict(zip(METRICS_CSV_HEADER, row)))
        if (checkpoint_path and config.checkpoint_every
                and update_index % config.checkpoint_every == 0):
            save_checkpoint(_make_checkpoint(params, spec, config, step_counter,
                                             optimizer), checkpoint_path)

    ckpt = _make_checkpoint(params, spec, config, step_counter, optimizer)
    if checkpoint_path:
        save_checkpoint(ckpt, checkpoint_path)
    if metrics_path:
        with open(metrics_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(METRICS_CSV_HEADER)
            writer.writerows(metrics_rows)
    return ckpt


def _make_checkpoint(params, spec, config, step_counter,
                     optimizer) -> PolicyCheckpoint:
    return PolicyCheckpoint(
        params=params.copy(), spec=spec, config=config,
        step_counter=step_counter,
        adam_state={"m": [m.copy() for m in optimizer.m],
                    "v": [v.copy() for v in optimizer.v],
                    "t": optimizer.t})
