"""Command-line entry points: train, eval, rollout, validate-config.

Exit codes: 0 success, 2 configuration/usage error, 3 runtime divergence.
The default output root is ./runs, overridable via the AUVSIM_OUT
environment variable; each run directory is guarded by a lockfile and
contains the fully resolved config so results are reproducible from the
directory alone.
"""

from __future__ import annotations

import math
import os
import sys

import click
import numpy as np
import yaml
from filelock import FileLock, Timeout

from .config import (
    RunConfig,
    dump_run_config,
    load_run_config,
    parse_run_config,
    resolved_dict,
    run_config_hash,
)
from .env import DR_PRESETS
from .errors import ConfigError, ParameterError, TrainingDiverged
from .evaluate import (
    Command,
    EvalScenario,
    format_report_table,
    nominal_scenario,
    run_command,
    run_suite,
    shifted_scenario,
    write_command_csv,
    zero_policy,
)
from .geometry import quat_from_axis_angle, quat_mul
from .ppo import load_checkpoint, save_checkpoint, train, write_reward_curve

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
OUTPUT_ROOT_ENV = "AUVSIM_OUT"


def _output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def _load_config(config_path, sets, dr, seed) -> RunConfig:
    overrides = _parse_overrides(sets)
    if dr is not None:
        overrides["env.dr"] = dr
    if seed is not None:
        overrides["seed"] = seed
    if config_path is None:
        return parse_run_config("", source="<defaults>", overrides=overrides)
    if not os.path.exists(config_path):
        raise ConfigError(f"config file not found: {config_path}")
    return load_run_config(config_path, overrides=overrides)


def _locked_dir(out_dir: str) -> FileLock:
    os.makedirs(out_dir, exist_ok=True)
    lock = FileLock(os.path.join(out_dir, ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise ConfigError(f"run directory {out_dir} is in use by another process")
    return lock


@click.group()
def main():
    """Underwater-vehicle simulator, trainer, and evaluation harness."""


@main.command("train")
@click.option("--config", "config_path", default=None, help="YAML run configuration.")
@click.option("--dr", type=click.Choice(sorted(DR_PRESETS)), default=None,
              help="Domain randomization preset override.")
@click.option("--seed", type=int, default=None, help="Seed override.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
              help="Dotted config override, e.g. ppo.iterations=50.")
@click.option("--quiet", is_flag=True, help="Suppress per-iteration progress.")
def cmd_train(config_path, dr, seed, out_dir, sets, quiet):
    """Train a policy and write checkpoint, reward curve, and config snapshot."""
    try:
        cfg = _load_config(config_path, sets, dr, seed)
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    out_dir = out_dir or os.path.join(_output_root(), f"train-seed{cfg.seed}")
    try:
        lock = _locked_dir(out_dir)
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)

    snapshot = dump_run_config(cfg)
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(snapshot)
    chash = run_config_hash(cfg)

    def progress(iteration, mean_reward, stats):
        if not quiet and (iteration % 10 == 0 or iteration == cfg.ppo.iterations - 1):
            click.echo(f"iter {iteration:4d}  mean_reward {mean_reward:8.3f}  "
                       f"kl {stats['kl']:.4f}  clip {stats['clip_fraction']:.3f}")

    try:
        try:
            result = train(cfg.ppo, cfg.vehicle, cfg.env, cfg.seed, progress=progress)
        except TrainingDiverged as exc:
            if exc.last_net is not None:
                save_checkpoint(exc.last_net, os.path.join(out_dir, "checkpoint.npz"),
                                cfg.seed, chash, extra={"diverged": 1})
            write_reward_curve(os.path.join(out_dir, "reward_curve.csv"), exc.curve)
            _fail(f"training diverged: {exc}", EXIT_DIVERGED)
        save_checkpoint(result.net, os.path.join(out_dir, "checkpoint.npz"), cfg.seed, chash)
        write_reward_curve(os.path.join(out_dir, "reward_curve.csv"), result.curve)
        click.echo(f"wrote {out_dir}/checkpoint.npz, reward_curve.csv, config.yaml "
                   f"(config hash {chash})")
    finally:
        lock.release()


def _load_scenarios(path, base_vehicle) -> list[EvalScenario]:
    if path is None:
        return [nominal_scenario(), shifted_scenario(base_vehicle)]
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or not isinstance(raw.get("scenarios"), list):
        raise ConfigError(f"{path}: expected a top-level 'scenarios' list")
    scenarios = []
    for i, entry in enumerate(raw["scenarios"]):
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError(f"{path}: scenarios[{i}] needs a name")
        unknown = set(entry) - {"name", "cob_offset", "volume", "volume_delta"}
        if unknown:
            raise ConfigError(f"{path}: scenarios[{i}] has unknown keys {sorted(unknown)}")
        volume = entry.get("volume")
        if "volume_delta" in entry:
            if volume is not None:
                raise ConfigError(f"{path}: scenarios[{i}]: give volume or volume_delta, not both")
            volume = base_vehicle.volume + float(entry["volume_delta"])
        cob = entry.get("cob_offset")
        scenarios.append(EvalScenario(
            name=str(entry["name"]),
            cob_offset=None if cob is None else np.array(cob, dtype=float),
            volume=None if volume is None else float(volume),
        ))
    return scenarios


@main.command("eval")
@click.argument("checkpoints", nargs=-1, required=True)
@click.option("--scenarios", "scenarios_path", default=None,
              help="YAML scenarios file (default: nominal + shifted).")
@click.option("--config", "config_path", default=None, help="YAML run configuration.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.option("--smoothing", type=float, default=1.0,
              help="Setpoint slerp fraction per step; 1 disables smoothing.")
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
def cmd_eval(checkpoints, scenarios_path, config_path, out_dir, smoothing, sets):
    """Evaluate checkpoints over the command suite; print the MSE table."""
    try:
        cfg = _load_config(config_path, sets, None, None)
        scenarios = _load_scenarios(scenarios_path, cfg.vehicle)
        policies = {}
        for path in checkpoints:
            net, _ = load_checkpoint(path)
            name = os.path.splitext(os.path.basename(path))[0]
            policies[name] = net.act
    except (ConfigError, ParameterError, OSError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    out_dir = out_dir or os.path.join(_output_root(), "eval")
    try:
        lock = _locked_dir(out_dir)
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    try:
        with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
            fh.write(dump_run_config(cfg))
        report = run_suite(policies, scenarios, base_params=cfg.vehicle,
                           env_cfg=cfg.env, setpoint_smoothing=smoothing,
                           out_dir=out_dir)
        click.echo(format_report_table(report))
        click.echo(f"wrote {out_dir}/report.json and per-command series")
    finally:
        lock.release()


def _parse_triplet(text, label):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ConfigError(f"{label} must be three comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise ConfigError(f"{label} must be numeric, got {text!r}")


def _rpy_to_quat(rpy_deg: np.ndarray) -> np.ndarray:
    roll, pitch, yaw = (math.radians(v) for v in rpy_deg)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    return quat_mul(qz, quat_mul(qy, qx))


@main.command("rollout")
@click.option("--checkpoint", required=True,
              help="Checkpoint path, or 'zero' for the do-nothing policy.")
@click.option("--pos", default="0,0,0", help="Setpoint position, m.")
@click.option("--rpy-deg", default="0,0,0", help="Setpoint roll,pitch,yaw in degrees.")
@click.option("--duration", type=float, default=5.0, help="Rollout length, s.")
@click.option("--scenario", type=click.Choice(["nominal", "shifted"]), default="nominal")
@click.option("--config", "config_path", default=None)
@click.option("--out", "out_path", default=None, help="Trajectory CSV path.")
@click.option("--smoothing", type=float, default=1.0)
@click.option("--set", "sets", multiple=True, metavar="KEY=VALUE")
def cmd_rollout(checkpoint, pos, rpy_deg, duration, scenario, config_path, out_path,
                smoothing, sets):
    """Log one deterministic rollout toward a fixed setpoint."""
    try:
        cfg = _load_config(config_path, sets, None, None)
        position = _parse_triplet(pos, "--pos")
        orientation = _rpy_to_quat(_parse_triplet(rpy_deg, "--rpy-deg"))
        if duration < 0:
            raise ConfigError(f"--duration must be >= 0, got {duration}")
        if checkpoint == "zero":
            policy = zero_policy
        else:
            net, _ = load_checkpoint(checkpoint)
            policy = net.act
    except (ConfigError, ParameterError, OSError) as exc:
        _fail(str(exc), EXIT_CONFIG)

    scen = nominal_scenario() if scenario == "nominal" else shifted_scenario(cfg.vehicle)
    command = Command("setpoint", position, orientation, duration)
    result = run_command(policy, scen, command, cfg.vehicle, cfg.env,
                         setpoint_smoothing=smoothing)
    out_path = out_path or os.path.join(_output_root(), "rollout.csv")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    write_command_csv(out_path, result)
    # sibling snapshot so the trajectory is reproducible from its directory
    meta = {
        "checkpoint": checkpoint,
        "scenario": scenario,
        "position": [float(v) for v in position],
        "orientation_quat": [float(v) for v in orientation],
        "duration": float(duration),
        "setpoint_smoothing": float(smoothing),
    }
    stem, _ = os.path.splitext(out_path)
    with open(stem + ".config.yaml", "w") as fh:
        yaml.safe_dump({"rollout": meta, "config": resolved_dict(cfg)}, fh,
                       sort_keys=False)
    if result.failed:
        _fail(f"rollout diverged after {len(result.times)} steps (see {out_path})",
              EXIT_DIVERGED)
    click.echo(f"wrote {out_path} ({len(result.times)} steps, "
               f"positional MSE {result.positional_mse:.4f} m^2, "
               f"angular MSE {result.angular_mse:.4f} rad^2)")


@main.command("validate-config")
@click.argument("path")
def cmd_validate_config(path):
    """Check a config file; print its hash on success."""
    try:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cfg = load_run_config(path)
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    click.echo(f"OK (config hash {run_config_hash(cfg)})")


if __name__ == "__main__":
    main()
