"""Vectorized pose-regulation environment.

A batch holds N fully independent vehicles.  Each episode the vehicle spawns
with a uniformly random attitude and a random offset of up to ``spawn_radius``
meters from its goal position (the origin), is given a uniformly random goal
attitude, and has ``episode_seconds`` to collect reward before a fixed-step
reset.  Physical parameters are re-sampled per episode according to the
domain-randomization settings.

The 17-element observation is, in order: goal offset in the vehicle frame
(3, norm-clipped), goal quaternion (4), current quaternion (4), body-frame
linear velocity (3), body-frame angular velocity (3).

Every per-env random draw comes from a counter-based stream keyed on
(seed, env index, episode index), so sampling is independent of batch
composition, worker count, and scheduling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ParameterError
from .geometry import (
    RigidBodyState,
    integrate_step,
    quat_angle_between,
    quat_rotate_inv,
)
from .hydro import VehicleParams, equivalent_radii, total_hydro_wrench
from .thrusters import action_wrench
from .kernels import ACT_DIM, OBS_DIM

log = logging.getLogger(__name__)

_MASK32 = 0xFFFFFFFF
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass
class RewardWeights:
    """Weights of the position, orientation, and energy reward terms."""

    position: float = 1.0
    orientation: float = 0.5
    power: float = 0.1

    def validate(self) -> None:
        if self.position < 0 or self.orientation < 0 or self.power < 0:
            raise ParameterError("reward weights must be nonnegative")
        if self.position == 0 and self.orientation == 0 and self.power == 0:
            raise ParameterError("at least one reward weight must be positive")

    @property
    def total(self) -> float:
        return self.position + self.orientation + self.power


@dataclass
class DomainRandomization:
    """Per-episode parameter noise: COB offset in a ball, volume in a range."""

    cob_radius: float = 0.0    # m, radius of the solid ball added to the COB offset
    volume_range: float = 0.0  # m^3, full width of the uniform volume perturbation

    def validate(self) -> None:
        if self.cob_radius < 0 or self.volume_range < 0:
            raise ParameterError("domain randomization extents must be nonnegative")


DR_PRESETS = {
    "none": DomainRandomization(0.0, 0.0),
    "small": DomainRandomization(0.25, 1.5e-3),
    "large": DomainRandomization(0.5, 3.0e-3),
}


@dataclass
class EnvConfig:
    dt: float = 0.0125
    decimation: int = 4
    episode_seconds: float = 3.0
    spawn_radius: float = 2.0
    offset_clip: float = 2.0
    reward: RewardWeights = field(default_factory=RewardWeights)
    dr: DomainRandomization = field(default_factory=DomainRandomization)
    workers: int = 1

    @property
    def control_period(self) -> float:
        return self.dt * self.decimation

    @property
    def episode_steps(self) -> int:
        return int(math.ceil(self.episode_seconds / self.control_period - 1e-9))

    def validate(self) -> None:
        if self.dt <= 0:
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if self.decimation < 1:
            raise ParameterError(f"decimation must be >= 1, got {self.decimation}")
        if self.episode_seconds <= 0:
            raise ParameterError(f"episode_seconds must be > 0, got {self.episode_seconds}")
        if self.spawn_radius < 0 or self.offset_clip <= 0:
            raise ParameterError("spawn_radius must be >= 0 and offset_clip > 0")
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")
        self.reward.validate()
        self.dr.validate()


def episode_stream(seed: int, env_index: int, episode: int) -> np.random.Generator:
    """Counter-based RNG stream for one (seed, env, episode) triple."""
    key = np.array(
        [seed & _MASK64, ((env_index & _MASK32) << 32) | (episode & _MASK32)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def control_stream(seed: int, tag: int = 0) -> np.random.Generator:
    """Stream for batch-level consumers (trainer); disjoint from env streams."""
    key = np.array([seed & _MASK64, (1 << 63) | (tag & _MASK32)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_uniform_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation via a normalized 4-vector of standard normals."""
    while True:
        q = rng.standard_normal(4)
        norm = math.sqrt(float(q @ q))
        if norm > 1e-12:
            return q / norm


def sample_in_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    """Uniform point in the solid ball of the given radius."""
    while True:
        direction = rng.standard_normal(3)
        norm = math.sqrt(float(direction @ direction))
        if norm > 1e-12:
            break
    r = radius * rng.random() ** (1.0 / 3.0)
    return direction * (r / norm)


def sample_domain(dr: DomainRandomization, base: VehicleParams, rng: np.random.Generator) -> VehicleParams:
    """Draw one randomized parameter set around the base configuration."""
    cob = base.cob_offset + sample_in_ball(rng, dr.cob_radius)
    while True:
        volume = base.volume + rng.uniform(-0.5 * dr.volume_range, 0.5 * dr.volume_range)
        if volume >= 0:
            break
    return base.replace(cob_offset=cob, volume=volume)


def pack_observation(x_offset, q_des, q, lin_vel, ang_vel) -> np.ndarray:
    return np.concatenate([x_offset, q_des, q, lin_vel, ang_vel])


def unpack_observation(obs: np.ndarray):
    """Split a 17-vector into (x_offset, q_des, q, lin_vel, ang_vel)."""
    obs = np.asarray(obs, dtype=float)
    return obs[0:3], obs[3:7], obs[7:11], obs[11:14], obs[14:17]


def build_observation(state: RigidBodyState, goal_pos, goal_quat, offset_clip: float) -> np.ndarray:
    offset = quat_rotate_inv(state.orientation, np.asarray(goal_pos, dtype=float) - state.position)
    norm = math.sqrt(float(offset @ offset))
    if norm > offset_clip:
        offset = offset * (offset_clip / norm)
    return pack_observation(offset, goal_quat, state.orientation, state.lin_vel, state.ang_vel)


def compute_reward(obs: np.ndarray, action: np.ndarray, weights: RewardWeights) -> float:
    """Reward from an observation and the executed action.

    Sum of three exponential terms: exp(-|x_offset|^2) for position,
    exp(-|angle(q_des, q)|) for attitude, exp(-|a|^2) for energy, weighted
    by ``weights``.  Always in (0, weights.total].
    """
    x_offset, q_des, q, _, _ = unpack_observation(obs)
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    angle = quat_angle_between(q_des, q)
    return (
        weights.position * math.exp(-float(x_offset @ x_offset))
        + weights.orientation * math.exp(-angle)
        + weights.power * math.exp(-float(a @ a))
    )


def reference_control_step(state: RigidBodyState, goal_pos, goal_quat, action,
                           params: VehicleParams, cfg: EnvConfig):
    """Single-vehicle oracle for one control step: plain composition of the
    pure force/integration operations.  Mirrors the batched kernel semantics;
    used to validate it.

    Returns (new_state, observation, reward).
    """
    thrust = action_wrench(action, params.thrusters)
    for _ in range(cfg.decimation):
        wrench = total_hydro_wrench(state, params) + thrust
        state = integrate_step(state, wrench, params, cfg.dt)
    obs = build_observation(state, goal_pos, goal_quat, cfg.offset_clip)
    reward = compute_reward(obs, action, cfg.reward)
    return state, obs, reward


class EnvBatch:
    """N independent pose-regulation environments stepped in lockstep.

    Stepping applies each action for ``cfg.decimation`` physics substeps,
    then returns observations, rewards, and done flags.  Environments that
    reach the episode horizon (or diverge to non-finite state) are flagged
    done; with ``auto_reset`` they are immediately re-sampled and their
    fresh observation is returned in place of the terminal one.
    """

    def __init__(self, n_envs: int, params: VehicleParams | None = None,
                 cfg: EnvConfig | None = None, seed: int = 0, env_indices=None):
        if n_envs < 1:
            raise ParameterError(f"n_envs must be >= 1, got {n_envs}")
        self.params = params if params is not None else VehicleParams()
        self.params.validate()
        self.cfg = cfg if cfg is not None else EnvConfig()
        self.cfg.validate()
        self.n_envs = n_envs
        self.seed = int(seed)
        if env_indices is None:
            env_indices = np.arange(n_envs)
        self.env_indices = np.asarray(env_indices, dtype=np.int64)
        if self.env_indices.shape != (n_envs,):
            raise ParameterError("env_indices must have one entry per env")
        if np.any(self.env_indices < 0) or np.any(self.env_indices >= 2**31):
            raise ParameterError("env_indices must lie in [0, 2^31)")

        box = equivalent_radii(self.params.mass, self.params.inertia)
        self._radii = (box.r_x, box.r_y, box.r_z)
        self._inertia = np.ascontiguousarray(self.params.inertia)
        self._inertia_inv = np.ascontiguousarray(np.linalg.inv(self.params.inertia))
        thr = self.params.thrusters
        self._thr_pos = np.ascontiguousarray(thr.positions)
        self._thr_dir = np.ascontiguousarray(thr.directions)

        n = n_envs
        self.pos = np.zeros((n, 3))
        self.quat = np.zeros((n, 4))
        self.quat[:, 0] = 1.0
        self.lin_vel = np.zeros((n, 3))
        self.ang_vel = np.zeros((n, 3))
        self.goal_pos = np.zeros((n, 3))
        self.goal_quat = np.zeros((n, 4))
        self.goal_quat[:, 0] = 1.0
        self.cob = np.tile(self.params.cob_offset, (n, 1))
        self.vol = np.full(n, self.params.volume)
        self.step_count = np.zeros(n, dtype=np.int64)
        self._episode = np.zeros(n, dtype=np.int64)
        self._obs = np.zeros((n, OBS_DIM))
        self._rew = np.zeros(n)
        self._bad = np.zeros(n, dtype=np.uint8)
        self.reset_all()

    @property
    def episode_steps(self) -> int:
        return self.cfg.episode_steps

    def observe(self) -> np.ndarray:
        return self._obs.copy()

    def state_of(self, i: int) -> RigidBodyState:
        return RigidBodyState(
            self.pos[i].copy(), self.quat[i].copy(),
            self.lin_vel[i].copy(), self.ang_vel[i].copy(),
        )

    def reset_all(self) -> np.ndarray:
        for i in range(self.n_envs):
            self.reset_env(i)
        return self.observe()

    def reset_env(self, i: int) -> np.ndarray:
        """Re-sample env i: pose, goal attitude, domain parameters.

        Draw order within the episode stream is fixed: initial attitude,
        goal attitude, spawn offset, COB noise, volume noise.
        """
        rng = episode_stream(self.seed, int(self.env_indices[i]), int(self._episode[i]))
        self._episode[i] += 1
        self.quat[i] = sample_uniform_quat(rng)
        self.goal_quat[i] = sample_uniform_quat(rng)
        self.pos[i] = sample_in_ball(rng, self.cfg.spawn_radius)
        dom = sample_domain(self.cfg.dr, self.params, rng)
        self.cob[i] = dom.cob_offset
        self.vol[i] = dom.volume
        self.goal_pos[i] = 0.0
        self.lin_vel[i] = 0.0
        self.ang_vel[i] = 0.0
        self.step_count[i] = 0
        self._obs[i] = build_observation(self.state_of(i), self.goal_pos[i], self.goal_quat[i],
                                         self.cfg.offset_clip)
        return self._obs[i].copy()

    def step(self, actions: np.ndarray, auto_reset: bool = True):
        """Advance every env one control step.

        Returns (obs (N,17), rewards (N,), done (N,) bool, info dict).
        info["diverged"] marks envs whose state went non-finite this step.
        """
        actions = np.ascontiguousarray(np.asarray(actions, dtype=float).reshape(self.n_envs, ACT_DIM))
        kernels.set_workers(self.cfg.workers)
        rx, ry, rz = self._radii
        kernels.step_batch(
            self.pos, self.quat, self.lin_vel, self.ang_vel, self.cob, self.vol,
            self.goal_pos, self.goal_quat, actions,
            self.cfg.decimation, self.cfg.dt,
            self.params.mass, self._inertia, self._inertia_inv,
            rx, ry, rz, self.params.water_density, self.params.water_viscosity,
            self.params.gravity,
            self._thr_pos, self._thr_dir,
            self.params.thrusters.rotor_constant, self.params.thrusters.omega_max,
            self.params.thrusters.pwm_neutral, self.params.thrusters.pwm_span,
            self.params.thrusters.pwm_deadband,
            self.cfg.offset_clip,
            self.cfg.reward.position, self.cfg.reward.orientation, self.cfg.reward.power,
            self._obs, self._rew, self._bad,
        )
        self.step_count += 1
        diverged = self._bad.astype(bool)
        done = (self.step_count >= self.episode_steps) | diverged
        for i in np.nonzero(diverged)[0]:
            log.warning("env %d diverged to non-finite state at step %d; resetting",
                        self.env_indices[i], self.step_count[i])
        rewards = self._rew.copy()
        if auto_reset:
            for i in np.nonzero(done)[0]:
                self.reset_env(int(i))
        return self._obs.copy(), rewards, done, {"diverged": diverged}

    def set_state(self, *, position=None, orientation=None, lin_vel=None, ang_vel=None,
                  goal_position=None, goal_orientation=None, cob_offset=None, volume=None):
        """Directly overwrite per-env state (values broadcast across envs).

        Used by the evaluation harness to pin start poses and setpoints;
        step counters restart and observations are rebuilt.
        """
        def fill(target, value):
            if value is not None:
                target[:] = np.asarray(value, dtype=float)

        fill(self.pos, position)
        fill(self.quat, orientation)
        fill(self.lin_vel, lin_vel)
        fill(self.ang_vel, ang_vel)
        fill(self.goal_pos, goal_position)
        fill(self.goal_quat, goal_orientation)
        fill(self.cob, cob_offset)
        if volume is not None:
            self.vol[:] = volume
        self.step_count[:] = 0
        for i in range(self.n_envs):
            self._obs[i] = build_observation(self.state_of(i), self.goal_pos[i],
                                             self.goal_quat[i], self.cfg.offset_clip)
        return self.observe()
