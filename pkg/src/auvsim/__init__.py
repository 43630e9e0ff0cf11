"""Batched 6-DOF underwater-vehicle simulator, PPO trainer, and
domain-transfer evaluation harness."""

from .env import (
    DR_PRESETS,
    DomainRandomization,
    EnvBatch,
    EnvConfig,
    RewardWeights,
    compute_reward,
)
from .errors import ConfigError, ParameterError, SimulationDiverged, TrainingDiverged
from .geometry import (
    RigidBodyState,
    Wrench,
    integrate_step,
    quat_angle_between,
    quat_rotate,
    quat_slerp,
)
from .hydro import (
    EquivalentBox,
    VehicleParams,
    buoyancy_wrench,
    drag_wrench,
    equivalent_radii,
    gravity_wrench,
    total_hydro_wrench,
    viscous_wrench,
)
from .ppo import PolicyNet, PpoConfig, RolloutBuffer, train
from .thrusters import ThrusterConfig, default_thrusters

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DR_PRESETS",
    "DomainRandomization",
    "EnvBatch",
    "EnvConfig",
    "EquivalentBox",
    "ParameterError",
    "PolicyNet",
    "PpoConfig",
    "RewardWeights",
    "RigidBodyState",
    "RolloutBuffer",
    "SimulationDiverged",
    "ThrusterConfig",
    "TrainingDiverged",
    "VehicleParams",
    "Wrench",
    "buoyancy_wrench",
    "compute_reward",
    "default_thrusters",
    "drag_wrench",
    "equivalent_radii",
    "gravity_wrench",
    "integrate_step",
    "quat_angle_between",
    "quat_rotate",
    "quat_slerp",
    "total_hydro_wrench",
    "train",
    "viscous_wrench",
]
