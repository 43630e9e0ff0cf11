"""Run-configuration loading, validation, and canonical serialization.

Configs are nested YAML.  Every key is optional (defaults reproduce the
stock vehicle and training setup); unknown keys and invalid values are
rejected with messages that name the full key path and the source line.
``dump_run_config(load_run_config(p))`` is a fixed point: dumping a loaded
config and loading the dump yields an identical resolved configuration.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np
import yaml

from .env import DR_PRESETS, DomainRandomization, EnvConfig, RewardWeights
from .errors import ConfigError, ParameterError
from .hydro import VehicleParams, box_inertia, DEFAULT_BOX_HALF_EXTENTS
from .ppo import PpoConfig
from .thrusters import ThrusterConfig, default_thrusters


@dataclass
class RunConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    seed: int = 0

    def validate(self) -> None:
        self.vehicle.validate()
        self.env.validate()
        self.ppo.validate()


def default_run_config() -> RunConfig:
    return RunConfig()


def _collect_lines(text: str) -> dict:
    """Map dotted key paths to 1-based source lines."""
    lines: dict = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                child = f"{path}.{key_node.value}" if path else str(key_node.value)
                lines[child] = key_node.start_mark.line + 1
                walk(value_node, child)

    walk(root, "")
    return lines


class _Reader:
    """Typed access into the raw config dict with error accumulation."""

    def __init__(self, raw: dict, lines: dict):
        self.raw = raw
        self.lines = lines
        self.errors: list[str] = []
        self.consumed: set = set()

    def _where(self, path: str) -> str:
        line = self.lines.get(path)
        return f"{path} (line {line})" if line else path

    def error(self, path: str, message: str) -> None:
        self.errors.append(f"{self._where(path)}: {message}")

    def _lookup(self, path: str):
        node = self.raw
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                return None, False
            node = node[part]
        self.consumed.add(path)
        return node, True

    def section(self, path: str) -> dict | None:
        value, present = self._lookup(path)
        if not present or value is None:
            return None
        if not isinstance(value, dict):
            self.error(path, f"expected a mapping, got {type(value).__name__}")
            return None
        return value

    def scalar(self, path: str, default, kind: str):
        value, present = self._lookup(path)
        if not present or value is None:
            return default
        if kind == "float":
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
            self.error(path, f"expected a number, got {value!r}")
        elif kind == "int":
            if isinstance(value, int) and not isinstance(value, bool):
                return int(value)
            self.error(path, f"expected an integer, got {value!r}")
        elif kind == "str":
            if isinstance(value, str):
                return value
            self.error(path, f"expected a string, got {value!r}")
        return default

    def vector(self, path: str, default, length: int):
        value, present = self._lookup(path)
        if not present or value is None:
            return default
        if (isinstance(value, (list, tuple)) and len(value) == length
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            return np.array([float(v) for v in value])
        self.error(path, f"expected a list of {length} numbers, got {value!r}")
        return default

    def check_unknown(self, path: str, allowed: set) -> None:
        section, present = self._lookup(path) if path else (self.raw, True)
        if not present or not isinstance(section, dict):
            return
        for key in section:
            if key not in allowed:
                child = f"{path}.{key}" if path else str(key)
                self.error(child, "unknown key")


def _build_inertia(reader: _Reader, mass: float) -> np.ndarray:
    reader.check_unknown("vehicle.inertia", {"box_half_extents", "diagonal", "matrix"})
    box = reader.vector("vehicle.inertia.box_half_extents", None, 3)
    diag = reader.vector("vehicle.inertia.diagonal", None, 3)
    matrix, has_matrix = reader._lookup("vehicle.inertia.matrix")
    given = [name for name, v in
             (("box_half_extents", box), ("diagonal", diag), ("matrix", matrix if has_matrix else None))
             if v is not None]
    if len(given) > 1:
        reader.error("vehicle.inertia", f"give at most one of box_half_extents/diagonal/matrix, got {given}")
    if matrix is not None and has_matrix:
        try:
            arr = np.array(matrix, dtype=float)
            if arr.shape != (3, 3):
                raise ValueError
            return arr
        except (ValueError, TypeError):
            reader.error("vehicle.inertia.matrix", f"expected a 3x3 matrix, got {matrix!r}")
    if diag is not None:
        return np.diag(diag)
    if box is not None:
        return box_inertia(mass, box)
    return box_inertia(mass, DEFAULT_BOX_HALF_EXTENTS)


def _build_thrusters(reader: _Reader) -> ThrusterConfig:
    base = default_thrusters()
    reader.check_unknown("vehicle.thrusters", {
        "rotor_constant", "omega_max", "pwm_neutral", "pwm_span", "pwm_deadband", "layout"})
    layout, has_layout = reader._lookup("vehicle.thrusters.layout")
    positions, directions = base.positions, base.directions
    if has_layout and layout is not None and layout != "default":
        if not isinstance(layout, list):
            reader.error("vehicle.thrusters.layout", "expected 'default' or a list of thrusters")
        else:
            pos, dirs = [], []
            for i, entry in enumerate(layout):
                prefix = f"vehicle.thrusters.layout[{i}]"
                if not isinstance(entry, dict) or set(entry) != {"position", "direction"}:
                    reader.error(prefix, "each thruster needs exactly position and direction")
                    continue
                try:
                    pos.append(np.array(entry["position"], dtype=float).reshape(3))
                    d = np.array(entry["direction"], dtype=float).reshape(3)
                except (ValueError, TypeError):
                    reader.error(prefix, "position/direction must be 3-vectors")
                    continue
                norm = float(np.linalg.norm(d))
                if abs(norm - 1.0) > 1e-6:
                    reader.error(prefix, f"direction must be a unit vector (norm {norm:.4g})")
                    continue
                dirs.append(d / norm)
            if not reader.errors:
                positions, directions = np.array(pos), np.array(dirs)
    return ThrusterConfig(
        positions=positions,
        directions=directions,
        rotor_constant=reader.scalar("vehicle.thrusters.rotor_constant", base.rotor_constant, "float"),
        omega_max=reader.scalar("vehicle.thrusters.omega_max", base.omega_max, "float"),
        pwm_neutral=reader.scalar("vehicle.thrusters.pwm_neutral", base.pwm_neutral, "float"),
        pwm_span=reader.scalar("vehicle.thrusters.pwm_span", base.pwm_span, "float"),
        pwm_deadband=reader.scalar("vehicle.thrusters.pwm_deadband", base.pwm_deadband, "float"),
    )


def _build_dr(reader: _Reader) -> DomainRandomization:
    value, present = reader._lookup("env.dr")
    if not present or value is None:
        return DomainRandomization(**vars(DR_PRESETS["none"]))
    if isinstance(value, str):
        if value not in DR_PRESETS:
            reader.error("env.dr", f"unknown preset {value!r}; expected one of {sorted(DR_PRESETS)}")
            return DomainRandomization()
        preset = DR_PRESETS[value]
        return DomainRandomization(preset.cob_radius, preset.volume_range)
    if isinstance(value, dict):
        reader.check_unknown("env.dr", {"cob_radius", "volume_range"})
        return DomainRandomization(
            cob_radius=reader.scalar("env.dr.cob_radius", 0.0, "float"),
            volume_range=reader.scalar("env.dr.volume_range", 0.0, "float"),
        )
    reader.error("env.dr", f"expected a preset name or mapping, got {value!r}")
    return DomainRandomization()


def parse_run_config(text: str, source: str = "<config>", overrides=None) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key}: {part} is not a mapping")
        node[parts[-1]] = value

    reader = _Reader(raw, _collect_lines(text))
    reader.check_unknown("", {"seed", "vehicle", "env", "ppo"})
    reader.check_unknown("vehicle", {
        "mass", "volume", "cob_offset", "water_density", "water_viscosity",
        "gravity", "inertia", "thrusters"})
    reader.check_unknown("env", {
        "dt", "decimation", "episode_seconds", "spawn_radius", "offset_clip",
        "workers", "reward", "dr"})
    reader.check_unknown("env.reward", {"position", "orientation", "power", "shaping"})
    reader.check_unknown("ppo", {
        "learning_rate", "gamma", "gae_lambda", "clip_ratio", "epochs",
        "minibatches", "value_coef", "entropy_coef", "max_grad_norm",
        "iterations", "num_envs", "steps_per_iteration", "hidden", "log_std_init"})

    seed = reader.scalar("seed", 0, "int")
    base_vehicle = VehicleParams()
    mass = reader.scalar("vehicle.mass", base_vehicle.mass, "float")
    vehicle = VehicleParams(
        mass=mass,
        inertia=_build_inertia(reader, mass),
        volume=reader.scalar("vehicle.volume", base_vehicle.volume, "float"),
        cob_offset=reader.vector("vehicle.cob_offset", base_vehicle.cob_offset, 3),
        water_density=reader.scalar("vehicle.water_density", base_vehicle.water_density, "float"),
        water_viscosity=reader.scalar("vehicle.water_viscosity", base_vehicle.water_viscosity, "float"),
        gravity=reader.scalar("vehicle.gravity", base_vehicle.gravity, "float"),
        thrusters=_build_thrusters(reader),
    )
    shaping = reader.scalar("env.reward.shaping", "none", "str")
    if shaping != "none":
        reader.error("env.reward.shaping", f"only 'none' is supported, got {shaping!r}")
    env_defaults = EnvConfig()
    env = EnvConfig(
        dt=reader.scalar("env.dt", env_defaults.dt, "float"),
        decimation=reader.scalar("env.decimation", env_defaults.decimation, "int"),
        episode_seconds=reader.scalar("env.episode_seconds", env_defaults.episode_seconds, "float"),
        spawn_radius=reader.scalar("env.spawn_radius", env_defaults.spawn_radius, "float"),
        offset_clip=reader.scalar("env.offset_clip", env_defaults.offset_clip, "float"),
        workers=reader.scalar("env.workers", env_defaults.workers, "int"),
        reward=RewardWeights(
            position=reader.scalar("env.reward.position", 1.0, "float"),
            orientation=reader.scalar("env.reward.orientation", 0.5, "float"),
            power=reader.scalar("env.reward.power", 0.1, "float"),
        ),
        dr=_build_dr(reader),
    )
    ppo_defaults = PpoConfig()
    ppo = PpoConfig(
        learning_rate=reader.scalar("ppo.learning_rate", ppo_defaults.learning_rate, "float"),
        gamma=reader.scalar("ppo.gamma", ppo_defaults.gamma, "float"),
        gae_lambda=reader.scalar("ppo.gae_lambda", ppo_defaults.gae_lambda, "float"),
        clip_ratio=reader.scalar("ppo.clip_ratio", ppo_defaults.clip_ratio, "float"),
        epochs=reader.scalar("ppo.epochs", ppo_defaults.epochs, "int"),
        minibatches=reader.scalar("ppo.minibatches", ppo_defaults.minibatches, "int"),
        value_coef=reader.scalar("ppo.value_coef", ppo_defaults.value_coef, "float"),
        entropy_coef=reader.scalar("ppo.entropy_coef", ppo_defaults.entropy_coef, "float"),
        max_grad_norm=reader.scalar("ppo.max_grad_norm", ppo_defaults.max_grad_norm, "float"),
        iterations=reader.scalar("ppo.iterations", ppo_defaults.iterations, "int"),
        num_envs=reader.scalar("ppo.num_envs", ppo_defaults.num_envs, "int"),
        steps_per_iteration=reader.scalar("ppo.steps_per_iteration", ppo_defaults.steps_per_iteration, "int"),
        hidden=reader.scalar("ppo.hidden", ppo_defaults.hidden, "int"),
        log_std_init=reader.scalar("ppo.log_std_init", ppo_defaults.log_std_init, "float"),
    )

    cfg = RunConfig(vehicle=vehicle, env=env, ppo=ppo, seed=seed)
    if not reader.errors:
        for section, obj in (("vehicle", cfg.vehicle), ("env", cfg.env), ("ppo", cfg.ppo)):
            try:
                obj.validate()
            except ParameterError as exc:
                reader.error(section, str(exc))
    if reader.errors:
        details = "\n  ".join(reader.errors)
        raise ConfigError(f"invalid configuration ({source}):\n  {details}")
    return cfg


def load_run_config(path, overrides=None) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_run_config(text, source=str(path), overrides=overrides)


def resolved_dict(cfg: RunConfig) -> dict:
    """Fully-expanded plain-python representation of a run configuration."""
    thr = cfg.vehicle.thrusters
    return {
        "seed": int(cfg.seed),
        "vehicle": {
            "mass": float(cfg.vehicle.mass),
            "volume": float(cfg.vehicle.volume),
            "cob_offset": [float(v) for v in cfg.vehicle.cob_offset],
            "water_density": float(cfg.vehicle.water_density),
            "water_viscosity": float(cfg.vehicle.water_viscosity),
            "gravity": float(cfg.vehicle.gravity),
            "inertia": {"matrix": [[float(v) for v in row] for row in cfg.vehicle.inertia]},
            "thrusters": {
                "rotor_constant": float(thr.rotor_constant),
                "omega_max": float(thr.omega_max),
                "pwm_neutral": float(thr.pwm_neutral),
                "pwm_span": float(thr.pwm_span),
                "pwm_deadband": float(thr.pwm_deadband),
                "layout": [
                    {"position": [float(v) for v in p], "direction": [float(v) for v in d]}
                    for p, d in zip(thr.positions, thr.directions)
                ],
            },
        },
        "env": {
            "dt": float(cfg.env.dt),
            "decimation": int(cfg.env.decimation),
            "episode_seconds": float(cfg.env.episode_seconds),
            "spawn_radius": float(cfg.env.spawn_radius),
            "offset_clip": float(cfg.env.offset_clip),
            "workers": int(cfg.env.workers),
            "reward": {
                "position": float(cfg.env.reward.position),
                "orientation": float(cfg.env.reward.orientation),
                "power": float(cfg.env.reward.power),
                "shaping": "none",
            },
            "dr": {
                "cob_radius": float(cfg.env.dr.cob_radius),
                "volume_range": float(cfg.env.dr.volume_range),
            },
        },
        "ppo": {
            "learning_rate": float(cfg.ppo.learning_rate),
            "gamma": float(cfg.ppo.gamma),
            "gae_lambda": float(cfg.ppo.gae_lambda),
            "clip_ratio": float(cfg.ppo.clip_ratio),
            "epochs": int(cfg.ppo.epochs),
            "minibatches": int(cfg.ppo.minibatches),
            "value_coef": float(cfg.ppo.value_coef),
            "entropy_coef": float(cfg.ppo.entropy_coef),
            "max_grad_norm": float(cfg.ppo.max_grad_norm),
            "iterations": int(cfg.ppo.iterations),
            "num_envs": int(cfg.ppo.num_envs),
            "steps_per_iteration": int(cfg.ppo.steps_per_iteration),
            "hidden": int(cfg.ppo.hidden),
            "log_std_init": float(cfg.ppo.log_std_init),
        },
    }


def dump_run_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    yaml.safe_dump(resolved_dict(cfg), out, sort_keys=False, default_flow_style=None)
    return out.getvalue()


def run_config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_run_config(cfg).encode("utf-8")).hexdigest()[:16]
