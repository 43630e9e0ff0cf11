"""Actor-critic MLP, generalized advantage estimation, and clipped-surrogate
policy optimization, implemented directly on numpy arrays.

The actor and critic are separate 2-hidden-layer tanh MLPs; the action
distribution is a diagonal Gaussian with a state-independent learnable
log-std.  Gradients are computed by hand (and are finite-difference checked
in the test suite), so the whole training stack stays dependency-light and
bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .env import EnvBatch, EnvConfig, control_stream
from .errors import ParameterError, TrainingDiverged
from .hydro import VehicleParams
from .kernels import ACT_DIM, OBS_DIM

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_VERSION = 1


@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    iterations: int = 200
    num_envs: int = 256
    steps_per_iteration: int = 60
    hidden: int = 128
    log_std_init: float = -0.5

    def validate(self) -> None:
        if not 0 < self.gamma <= 1 or not 0 < self.gae_lambda <= 1:
            raise ParameterError("gamma and gae_lambda must lie in (0, 1]")
        if not 0 < self.clip_ratio < 1:
            raise ParameterError(f"clip_ratio must lie in (0, 1), got {self.clip_ratio}")
        for name in ("epochs", "minibatches", "iterations", "num_envs",
                     "steps_per_iteration", "hidden"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be a positive integer")
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be >= 0")
        if self.max_grad_norm <= 0:
            raise ParameterError("max_grad_norm must be > 0")
        if not LOG_STD_MIN <= self.log_std_init <= LOG_STD_MAX:
            raise ParameterError(
                f"log_std_init must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]")


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a if rows >= cols else a.T)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class PolicyNet:
    """Separate actor and critic MLPs plus the Gaussian log-std vector."""

    def __init__(self, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM,
                 hidden: int = 128, log_std_init: float = -0.5,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = hidden
        h = hidden
        g = math.sqrt(2.0)
        self.a_w1 = _orthogonal(rng, obs_dim, h, g)
        self.a_b1 = np.zeros(h)
        self.a_w2 = _orthogonal(rng, h, h, g)
        self.a_b2 = np.zeros(h)
        self.a_w3 = _orthogonal(rng, h, act_dim, 0.01)
        self.a_b3 = np.zeros(act_dim)
        self.c_w1 = _orthogonal(rng, obs_dim, h, g)
        self.c_b1 = np.zeros(h)
        self.c_w2 = _orthogonal(rng, h, h, g)
        self.c_b2 = np.zeros(h)
        self.c_w3 = _orthogonal(rng, h, 1, 1.0)
        self.c_b3 = np.zeros(1)
        self.log_std = np.full(act_dim, float(log_std_init))

    PARAM_NAMES = (
        "a_w1", "a_b1", "a_w2", "a_b2", "a_w3", "a_b3",
        "c_w1", "c_b1", "c_w2", "c_b2", "c_w3", "c_b3",
        "log_std",
    )

    def parameters(self) -> dict:
        """Live references to every parameter array, keyed by name."""
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def copy(self) -> "PolicyNet":
        dup = PolicyNet.__new__(PolicyNet)
        dup.obs_dim, dup.act_dim, dup.hidden = self.obs_dim, self.act_dim, self.hidden
        for name in self.PARAM_NAMES:
            setattr(dup, name, getattr(self, name).copy())
        return dup

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, n)).all() for n in self.PARAM_NAMES)

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def actor_mean(self, obs: np.ndarray):
        """Action means for a batch of observations; returns (mean, cache)."""
        z1 = obs @ self.a_w1 + self.a_b1
        h1 = np.tanh(z1)
        z2 = h1 @ self.a_w2 + self.a_b2
        h2 = np.tanh(z2)
        mean = h2 @ self.a_w3 + self.a_b3
        return mean, (obs, h1, h2)

    def critic_value(self, obs: np.ndarray):
        """State values for a batch of observations; returns (value, cache)."""
        z1 = obs @ self.c_w1 + self.c_b1
        h1 = np.tanh(z1)
        z2 = h1 @ self.c_w2 + self.c_b2
        h2 = np.tanh(z2)
        value = (h2 @ self.c_w3 + self.c_b3)[:, 0]
        return value, (obs, h1, h2)

    def act(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic (mean) actions; accepts a single obs or a batch."""
        single = obs.ndim == 1
        mean, _ = self.actor_mean(np.atleast_2d(obs))
        return mean[0] if single else mean


def policy_forward(obs: np.ndarray, net: PolicyNet):
    """Deterministic forward pass: (mean, log_std, value) for one observation
    or a batch."""
    single = np.asarray(obs).ndim == 1
    obs2 = np.atleast_2d(np.asarray(obs, dtype=float))
    mean, _ = net.actor_mean(obs2)
    value, _ = net.critic_value(obs2)
    if not (np.isfinite(mean).all() and np.isfinite(value).all()):
        raise TrainingDiverged("policy forward pass produced non-finite outputs")
    if single:
        return mean[0], net.log_std.copy(), float(value[0])
    return mean, net.log_std.copy(), value


def gaussian_log_prob(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over the action axis."""
    z = (x - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * x.shape[-1] * LOG_2PI


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian (independent of the mean)."""
    return float(np.sum(log_std) + 0.5 * log_std.shape[0] * (1.0 + LOG_2PI))


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator):
    """Draw a ~ N(mean, exp(log_std)^2) per dimension.

    Returns the raw (unclamped) sample and its log-probability; execution
    clamps to [-1, 1] downstream (the env clamps defensively as well).
    """
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * noise
    return action, gaussian_log_prob(action, mean, log_std)


class RolloutBuffer:
    """Fixed-capacity on-policy storage: steps x envs."""

    def __init__(self, steps: int, n_envs: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        self.steps = steps
        self.n_envs = n_envs
        self.obs = np.zeros((steps, n_envs, obs_dim))
        self.actions = np.zeros((steps, n_envs, act_dim))
        self.log_probs = np.zeros((steps, n_envs))
        self.rewards = np.zeros((steps, n_envs))
        self.values = np.zeros((steps, n_envs))
        self.dones = np.zeros((steps, n_envs), dtype=bool)
        self.cursor = 0

    @property
    def full(self) -> bool:
        return self.cursor == self.steps

    def add(self, obs, actions, log_probs, rewards, values, dones) -> None:
        t = self.cursor
        if t >= self.steps:
            raise IndexError("rollout buffer is already full")
        self.obs[t] = obs
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.rewards[t] = rewards
        self.values[t] = values
        self.dones[t] = dones
        self.cursor = t + 1

    def clear(self) -> None:
        self.cursor = 0


def gae_advantages(buffer: RolloutBuffer, gamma: float, gae_lambda: float,
                   bootstrap_values: np.ndarray):
    """Generalized advantage estimates and value targets.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
    A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}

    Done flags cut both the TD target and the recursion, so nothing leaks
    across episode boundaries; ``bootstrap_values`` supplies V for the state
    after the final stored step.
    """
    if not buffer.full:
        raise ParameterError("buffer must be full before computing advantages")
    advantages = np.zeros_like(buffer.rewards)
    running = np.zeros(buffer.n_envs)
    next_value = np.asarray(bootstrap_values, dtype=float)
    for t in range(buffer.steps - 1, -1, -1):
        mask = 1.0 - buffer.dones[t].astype(float)
        delta = buffer.rewards[t] + gamma * next_value * mask - buffer.values[t]
        running = delta + gamma * gae_lambda * mask * running
        advantages[t] = running
        next_value = buffer.values[t]
    return advantages, advantages + buffer.values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def _mlp_backward(dout, cache, w2, w3):
    x, h1, h2 = cache
    dw3 = h2.T @ dout
    db3 = dout.sum(axis=0)
    dh2 = dout @ w3.T
    dz2 = dh2 * (1.0 - h2 * h2)
    dw2 = h1.T @ dz2
    db2 = dz2.sum(axis=0)
    dh1 = dz2 @ w2.T
    dz1 = dh1 * (1.0 - h1 * h1)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return dw1, db1, dw2, db2, dw3, db3


def ppo_loss_and_grads(net: PolicyNet, obs, actions, old_log_probs, advantages,
                       returns, cfg: PpoConfig, compute_grads: bool = True):
    """Clipped-surrogate loss over one minibatch.

    total = policy + value_coef * value - entropy_coef * entropy.  Returns
    (stats, grads); grads is None when compute_grads is False.
    """
    batch = obs.shape[0]
    mean, a_cache = net.actor_mean(obs)
    values, c_cache = net.critic_value(obs)

    inv_std = np.exp(-net.log_std)
    z = (actions - mean) * inv_std
    new_log_probs = gaussian_log_prob(actions, mean, net.log_std)
    ratio = np.exp(new_log_probs - old_log_probs)

    surr1 = ratio * advantages
    clipped_ratio = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surr2 = clipped_ratio * advantages
    policy_loss = -np.minimum(surr1, surr2).mean()

    value_err = values - returns
    value_loss = float(np.mean(value_err * value_err))
    entropy = gaussian_entropy(net.log_std)
    total = float(policy_loss) + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    stats = {
        "total_loss": total,
        "policy_loss": float(policy_loss),
        "value_loss": value_loss,
        "entropy": entropy,
        "kl": float(np.mean(old_log_probs - new_log_probs)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio)),
        "ratio_max_dev": float(np.max(np.abs(ratio - 1.0))),
    }
    if not np.isfinite(total):
        return stats, None
    if not compute_grads:
        return stats, None

    use_unclipped = surr1 <= surr2
    dlogp = -(advantages * ratio * use_unclipped) / batch
    dmean = dlogp[:, None] * z * inv_std
    dlog_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - cfg.entropy_coef * np.ones(net.act_dim)
    dvalue = cfg.value_coef * 2.0 * value_err / batch

    grads = dict.fromkeys(net.PARAM_NAMES)
    (grads["a_w1"], grads["a_b1"], grads["a_w2"], grads["a_b2"],
     grads["a_w3"], grads["a_b3"]) = _mlp_backward(dmean, a_cache, net.a_w2, net.a_w3)
    (grads["c_w1"], grads["c_b1"], grads["c_w2"], grads["c_b2"],
     grads["c_w3"], grads["c_b3"]) = _mlp_backward(dvalue[:, None], c_cache, net.c_w2, net.c_w3)
    grads["c_b3"] = np.atleast_1d(grads["c_b3"])
    grads["log_std"] = dlog_std
    return stats, grads


def global_grad_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    """Adam optimizer over a named parameter dict."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            params[name] -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def ppo_update(net: PolicyNet, buffer: RolloutBuffer, cfg: PpoConfig,
               optimizer: Adam, rng: np.random.Generator,
               bootstrap_values: np.ndarray) -> dict:
    """Run the clipped-surrogate update over a full rollout buffer.

    Advantages are normalized once over the whole batch, then consumed in
    shuffled minibatches for ``cfg.epochs`` passes.  Old log-probs are
    recomputed per minibatch from a frozen snapshot of the pre-update
    parameters (same code path as the new log-probs), so the importance
    ratio on the first minibatch is exactly 1.  Raises TrainingDiverged
    on a non-finite loss.
    """
    advantages, returns = gae_advantages(buffer, cfg.gamma, cfg.gae_lambda, bootstrap_values)
    obs = buffer.obs.reshape(-1, net.obs_dim)
    actions = buffer.actions.reshape(-1, net.act_dim)
    adv = normalize_advantages(advantages.reshape(-1))
    ret = returns.reshape(-1)

    frozen = net.copy()
    params = net.parameters()
    totals: dict = {}
    n_batches = 0
    first_ratio_dev = None
    for _ in range(cfg.epochs):
        order = rng.permutation(obs.shape[0])
        for chunk in np.array_split(order, cfg.minibatches):
            old_mean, _ = frozen.actor_mean(obs[chunk])
            old_log_probs = gaussian_log_prob(actions[chunk], old_mean, frozen.log_std)
            stats, grads = ppo_loss_and_grads(
                net, obs[chunk], actions[chunk], old_log_probs,
                adv[chunk], ret[chunk], cfg)
            if grads is None:
                raise TrainingDiverged(
                    f"non-finite PPO loss (policy={stats['policy_loss']}, "
                    f"value={stats['value_loss']})")
            if first_ratio_dev is None:
                first_ratio_dev = stats["ratio_max_dev"]
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(params, grads)
            net.clamp_log_std()
            for key, value in stats.items():
                totals[key] = totals.get(key, 0.0) + value
            n_batches += 1
    out = {key: value / n_batches for key, value in totals.items()}
    out["first_ratio_max_dev"] = first_ratio_dev
    return out


@dataclass
class TrainResult:
    net: PolicyNet
    curve: list  # rows of (iteration, mean_reward, std_reward)
    stats_history: list = field(default_factory=list)


def train(ppo_cfg: PpoConfig, params: VehicleParams, env_cfg: EnvConfig,
          seed: int, progress=None) -> TrainResult:
    """Full training loop: rollout collection, GAE, PPO updates.

    Deterministic for a fixed seed and independent of the env worker count.
    The reward curve reports the mean and std of completed-episode returns
    per iteration.  On divergence raises TrainingDiverged carrying the last
    finite network and the curve so far.
    """
    ppo_cfg.validate()
    env = EnvBatch(ppo_cfg.num_envs, params, env_cfg, seed=seed)
    rng = control_stream(seed, tag=0)
    net = PolicyNet(OBS_DIM, ACT_DIM, ppo_cfg.hidden, ppo_cfg.log_std_init,
                    rng=control_stream(seed, tag=1))
    optimizer = Adam(ppo_cfg.learning_rate)
    curve = []
    stats_history = []
    last_good = net.copy()

    obs = env.observe()
    episode_acc = np.zeros(ppo_cfg.num_envs)
    for iteration in range(ppo_cfg.iterations):
        buffer = RolloutBuffer(ppo_cfg.steps_per_iteration, ppo_cfg.num_envs)
        episode_returns = []
        for _ in range(ppo_cfg.steps_per_iteration):
            mean, _ = net.actor_mean(obs)
            values, _ = net.critic_value(obs)
            actions, log_probs = sample_action(mean, net.log_std, rng)
            next_obs, rewards, dones, _ = env.step(actions)
            buffer.add(obs, actions, log_probs, rewards, values, dones)
            episode_acc += rewards
            if dones.any():
                episode_returns.extend(episode_acc[dones].tolist())
                episode_acc[dones] = 0.0
            obs = next_obs
        bootstrap, _ = net.critic_value(obs)

        try:
            stats = ppo_update(net, buffer, ppo_cfg, optimizer, rng, bootstrap)
        except TrainingDiverged as exc:
            raise TrainingDiverged(str(exc), last_net=last_good, curve=curve) from exc
        if not net.is_finite():
            raise TrainingDiverged("network parameters became non-finite",
                                   last_net=last_good, curve=curve)
        last_good = net.copy()

        if episode_returns:
            mean_r = float(np.mean(episode_returns))
            std_r = float(np.std(episode_returns))
        else:
            # no episode ended this iteration: scale the step reward instead
            mean_r = float(buffer.rewards.mean()) * env.episode_steps
            std_r = float(buffer.rewards.std()) * env.episode_steps
        curve.append((iteration, mean_r, std_r))
        stats_history.append(stats)
        if progress is not None:
            progress(iteration, mean_r, stats)
    return TrainResult(net=net, curve=curve, stats_history=stats_history)


def write_reward_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_reward", "std_reward"])
        for iteration, mean_r, std_r in curve:
            writer.writerow([iteration, repr(float(mean_r)), repr(float(std_r))])


def read_reward_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(int(r[0]), float(r[1]), float(r[2])) for r in rows[1:]]


def save_checkpoint(net: PolicyNet, path, seed: int, config_hash: str = "",
                    extra: dict | None = None) -> None:
    """Persist all parameters plus provenance (seed, config hash) as .npz."""
    arrays = {name: getattr(net, name) for name in net.PARAM_NAMES}
    meta = dict(
        checkpoint_version=CHECKPOINT_VERSION,
        obs_dim=net.obs_dim,
        act_dim=net.act_dim,
        hidden=net.hidden,
        seed=int(seed),
        config_hash=config_hash,
    )
    if extra:
        meta.update(extra)
    np.savez(path, **arrays, **{f"meta_{k}": np.asarray(v) for k, v in meta.items()})


def load_checkpoint(path) -> tuple[PolicyNet, dict]:
    """Load a checkpoint; raises ParameterError on interface mismatch."""
    with np.load(path, allow_pickle=False) as data:
        missing = [n for n in PolicyNet.PARAM_NAMES if n not in data]
        if missing:
            raise ParameterError(f"checkpoint {path} missing arrays: {missing}")
        obs_dim = int(data["meta_obs_dim"])
        act_dim = int(data["meta_act_dim"])
        hidden = int(data["meta_hidden"])
        if obs_dim != OBS_DIM or act_dim != ACT_DIM:
            raise ParameterError(
                f"checkpoint {path} has interface {obs_dim}/{act_dim}, "
                f"expected {OBS_DIM}/{ACT_DIM}")
        net = PolicyNet.__new__(PolicyNet)
        net.obs_dim, net.act_dim, net.hidden = obs_dim, act_dim, hidden
        for name in PolicyNet.PARAM_NAMES:
            setattr(net, name, np.array(data[name], dtype=float))
        expected = {"a_w1": (obs_dim, hidden), "a_w3": (hidden, act_dim),
                    "log_std": (act_dim,)}
        for name, shape in expected.items():
            if getattr(net, name).shape != shape:
                raise ParameterError(f"checkpoint {path}: array {name} has shape "
                                     f"{getattr(net, name).shape}, expected {shape}")
        meta = {key[5:]: data[key].item() if data[key].ndim == 0 else data[key]
                for key in data.files if key.startswith("meta_")}
    return net, meta


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
