"""Domain-transfer evaluation: run a policy through a fixed setpoint suite
under nominal and shifted vehicle parameters and report positional/angular
mean-squared errors.

The default suite commands +-1 m along each translation axis and +-60 deg
about each rotation axis, 5 s each.  Evaluation is fully deterministic:
the vehicle starts at the origin, upright and at rest, domain randomization
is off, and the policy runs in mean-action mode.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .env import EnvBatch, EnvConfig, DomainRandomization
from .geometry import IDENTITY_QUAT, quat_angle_between, quat_from_axis_angle, quat_rotate_inv, quat_slerp
from .hydro import VehicleParams

CSV_COLUMNS = ["t", "x_offset_x", "x_offset_y", "x_offset_z", "quat_angle",
               "action_0", "action_1", "action_2", "action_3", "action_4",
               "action_5", "reward"]


@dataclass(frozen=True)
class Command:
    """One pose setpoint held for a fixed duration."""

    name: str
    position: np.ndarray
    orientation: np.ndarray
    duration: float = 5.0


@dataclass(frozen=True)
class EvalScenario:
    """Named vehicle-parameter override for an evaluation run."""

    name: str
    cob_offset: np.ndarray | None = None
    volume: float | None = None

    def apply(self, base: VehicleParams) -> VehicleParams:
        overrides = {}
        if self.cob_offset is not None:
            overrides["cob_offset"] = np.asarray(self.cob_offset, dtype=float)
        if self.volume is not None:
            overrides["volume"] = float(self.volume)
        return base.replace(**overrides)


def nominal_scenario() -> EvalScenario:
    return EvalScenario(name="nominal")


def shifted_scenario(base: VehicleParams | None = None) -> EvalScenario:
    """COB moved 0.2 m forward of the COM and volume lowered by 1.5 L."""
    volume = (base.volume if base is not None else VehicleParams().volume) - 1.5e-3
    return EvalScenario(name="shifted", cob_offset=np.array([0.2, 0.0, 0.0]), volume=volume)


def default_command_suite(distance: float = 1.0, angle_deg: float = 60.0,
                          duration: float = 5.0) -> list[Command]:
    commands = []
    axes = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])]
    for axis, label in zip(axes, "xyz"):
        for sign, tag in ((1.0, "pos"), (-1.0, "neg")):
            commands.append(Command(f"{label}_{tag}", sign * distance * axis,
                                    IDENTITY_QUAT.copy(), duration))
    for axis, label in zip(axes, ("roll", "pitch", "yaw")):
        for sign, tag in ((1.0, "pos"), (-1.0, "neg")):
            q = quat_from_axis_angle(axis, sign * math.radians(angle_deg))
            commands.append(Command(f"{label}_{tag}", np.zeros(3), q, duration))
    return commands


def smooth_setpoint(q_current: np.ndarray, q_goal: np.ndarray, t_frac: float) -> np.ndarray:
    """Blend the attitude setpoint toward the goal; t_frac=1 disables smoothing."""
    return quat_slerp(q_current, q_goal, min(1.0, t_frac))


def zero_policy(obs: np.ndarray) -> np.ndarray:
    """Do-nothing policy; useful as a baseline and a CLI sentinel."""
    obs = np.atleast_2d(obs)
    return np.zeros((obs.shape[0], 6))


@dataclass
class CommandResult:
    command: Command
    times: np.ndarray
    offsets: np.ndarray       # (T, 3) goal offset in the vehicle frame, unclipped
    angles: np.ndarray        # (T,) attitude error to the commanded setpoint, rad
    actions: np.ndarray       # (T, 6)
    rewards: np.ndarray       # (T,)
    failed: bool = False

    @property
    def positional_mse(self) -> float:
        if self.failed:
            return math.inf
        if len(self.times) == 0:
            return 0.0
        return math.fsum(float(o @ o) for o in self.offsets) / len(self.offsets)

    @property
    def angular_mse(self) -> float:
        if self.failed:
            return math.inf
        if len(self.times) == 0:
            return 0.0
        return math.fsum(float(a) * float(a) for a in self.angles) / len(self.angles)


def run_command(policy, scenario: EvalScenario, command: Command,
                base_params: VehicleParams | None = None,
                env_cfg: EnvConfig | None = None,
                setpoint_smoothing: float = 1.0) -> CommandResult:
    """Deterministically roll one command in one scenario.

    ``policy`` maps an (N, 17) observation batch to (N, 6) actions.  With
    ``setpoint_smoothing`` < 1 the attitude setpoint shown to the policy is
    slerped from the current attitude toward the goal each step; logged
    errors are always measured against the raw commanded pose.
    """
    base_params = base_params if base_params is not None else VehicleParams()
    env_cfg = env_cfg if env_cfg is not None else EnvConfig()
    params = scenario.apply(base_params)
    period = env_cfg.control_period
    steps = int(math.ceil(command.duration / period - 1e-9))
    empty = CommandResult(command, np.zeros(0), np.zeros((0, 3)), np.zeros(0),
                          np.zeros((0, 6)), np.zeros(0))
    if steps == 0:
        return empty

    eval_cfg = replace(env_cfg, dr=DomainRandomization(0.0, 0.0),
                       episode_seconds=command.duration, workers=1)
    env = EnvBatch(1, params, eval_cfg, seed=0)
    env.set_state(position=np.zeros(3), orientation=IDENTITY_QUAT,
                  lin_vel=np.zeros(3), ang_vel=np.zeros(3),
                  goal_position=command.position, goal_orientation=command.orientation)

    times = np.zeros(steps)
    offsets = np.zeros((steps, 3))
    angles = np.zeros(steps)
    actions_log = np.zeros((steps, 6))
    rewards = np.zeros(steps)
    obs = env.observe()
    for t in range(steps):
        if setpoint_smoothing < 1.0:
            blended = smooth_setpoint(env.quat[0], command.orientation, setpoint_smoothing)
            obs = env.set_state(goal_orientation=blended)
        action = np.asarray(policy(obs), dtype=float).reshape(1, 6)
        obs, reward, _, info = env.step(action, auto_reset=False)
        if info["diverged"][0]:
            result = CommandResult(command, times[: t], offsets[: t], angles[: t],
                                   actions_log[: t], rewards[: t], failed=True)
            return result
        times[t] = (t + 1) * period
        offsets[t] = quat_rotate_inv(env.quat[0], command.position - env.pos[0])
        angles[t] = quat_angle_between(command.orientation, env.quat[0])
        actions_log[t] = np.clip(action[0], -1.0, 1.0)
        rewards[t] = reward[0]
    return CommandResult(command, times, offsets, angles, actions_log, rewards)


def run_suite(policies: dict, scenarios: list[EvalScenario],
              suite: list[Command] | None = None,
              base_params: VehicleParams | None = None,
              env_cfg: EnvConfig | None = None,
              setpoint_smoothing: float = 1.0,
              out_dir=None) -> dict:
    """Evaluate every (policy, scenario, command) combination.

    Returns the report dict; when ``out_dir`` is given also writes
    ``report.json`` plus one time-series CSV per command under ``series/``.
    Aggregate MSEs are exact (order-independent) means over commands.
    """
    suite = suite if suite is not None else default_command_suite()
    results: dict = {}
    for policy_name, policy in policies.items():
        results[policy_name] = {}
        for scenario in scenarios:
            entries = []
            for command in suite:
                res = run_command(policy, scenario, command, base_params, env_cfg,
                                  setpoint_smoothing)
                entries.append(res)
                if out_dir is not None:
                    series_dir = os.path.join(out_dir, "series")
                    os.makedirs(series_dir, exist_ok=True)
                    fname = f"{policy_name}__{scenario.name}__{command.name}.csv"
                    write_command_csv(os.path.join(series_dir, fname), res)
            results[policy_name][scenario.name] = {
                "angular_mse": math.fsum(r.angular_mse for r in entries) / len(entries),
                "positional_mse": math.fsum(r.positional_mse for r in entries) / len(entries),
                "commands": [
                    {
                        "name": r.command.name,
                        "angular_mse": r.angular_mse,
                        "positional_mse": r.positional_mse,
                        "failed": r.failed,
                    }
                    for r in entries
                ],
            }
    report = {
        "policies": list(policies.keys()),
        "scenarios": [s.name for s in scenarios],
        "commands": [c.name for c in (suite or [])],
        "setpoint_smoothing": setpoint_smoothing,
        "results": results,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, allow_nan=True)
    return report


def write_command_csv(path, result: CommandResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for t in range(len(result.times)):
            row = [result.times[t], *result.offsets[t], result.angles[t],
                   *result.actions[t], result.rewards[t]]
            writer.writerow([repr(float(v)) for v in row])


def read_command_csv(path):
    """Read a command time series back into column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header in {path}")
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    data = data.reshape(-1, len(CSV_COLUMNS))
    return {
        "t": data[:, 0],
        "offsets": data[:, 1:4],
        "angles": data[:, 4],
        "actions": data[:, 5:11],
        "rewards": data[:, 11],
    }


def mses_from_series(offsets: np.ndarray, angles: np.ndarray) -> tuple[float, float]:
    """Recompute (positional, angular) MSE from a logged time series."""
    if len(angles) == 0:
        return 0.0, 0.0
    pos = math.fsum(float(o @ o) for o in offsets) / len(offsets)
    ang = math.fsum(float(a) * float(a) for a in angles) / len(angles)
    return pos, ang


def format_report_table(report: dict) -> str:
    """Render aggregate MSEs as one block per scenario, policies as columns."""
    lines = []
    policies = report["policies"]
    width = max([len(p) for p in policies] + [14])
    for scenario in report["scenarios"]:
        lines.append(f"== {scenario} ==")
        header = " " * 16 + "  ".join(f"{p:>{width}}" for p in policies)
        lines.append(header)
        for metric, key in (("Angular MSE", "angular_mse"), ("Positional MSE", "positional_mse")):
            cells = []
            for p in policies:
                value = report["results"][p][scenario][key]
                cells.append(f"{value:>{width}.4f}")
            lines.append(f"{metric:<16}" + "  ".join(cells))
        lines.append("")
    return "\n".join(lines)
