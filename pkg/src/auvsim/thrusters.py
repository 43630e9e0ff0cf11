"""Thruster model: normalized commands -> PWM -> propeller speed -> wrench.

The thrust curve is the sign-preserving quadratic Thrust = C_t * |omega| * omega
with a zero-order speed response (commanded speed is reached instantly).  The
PWM stage is a symmetric affine map with a deadband around neutral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .geometry import Wrench

N_THRUSTERS = 6


@dataclass
class ThrusterConfig:
    """Geometry and actuation constants for a set of fixed thrusters.

    positions/directions are (n, 3) body-frame arrays; directions are the
    unit vectors along which positive thrust pushes the vehicle.
    """

    positions: np.ndarray
    directions: np.ndarray
    rotor_constant: float = 0.001
    omega_max: float = 230.0
    pwm_neutral: float = 1500.0
    pwm_span: float = 400.0
    pwm_deadband: float = 25.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.directions = np.asarray(self.directions, dtype=float)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def validate(self, require_full_layout: bool = True) -> None:
        if self.positions.shape != self.directions.shape or self.positions.ndim != 2:
            raise ParameterError("thruster positions/directions must both be (n, 3)")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ParameterError("thruster directions must be unit vectors")
        if self.rotor_constant <= 0:
            raise ParameterError(f"rotor_constant must be > 0, got {self.rotor_constant}")
        if self.omega_max <= 0:
            raise ParameterError(f"omega_max must be > 0, got {self.omega_max}")
        if not 0 <= self.pwm_deadband < self.pwm_span:
            raise ParameterError("pwm_deadband must lie in [0, pwm_span)")
        if require_full_layout:
            if self.count != N_THRUSTERS:
                raise ParameterError(f"layout must have exactly {N_THRUSTERS} thrusters, got {self.count}")
            rank = np.linalg.matrix_rank(allocation_matrix(self))
            if rank < 6:
                raise ParameterError(f"thruster layout is rank {rank}; cannot actuate all 6 DOF")


def default_thrusters() -> ThrusterConfig:
    """Generic 6-thruster, 6-DOF layout.

    Four corner thrusters at 45 deg azimuth in the xy-plane, tilted 25 deg
    out of plane: the tilt gives the corner set pitch (and extra roll)
    authority, which a flat corner arrangement plus two verticals cannot
    provide.  Two vertical thrusters handle heave and roll.
    """
    tilt = math.radians(25.0)
    c = math.cos(tilt) * math.sqrt(0.5)
    s = math.sin(tilt)
    positions = np.array(
        [
            [0.2, 0.15, 0.0],    # front left
            [0.2, -0.15, 0.0],   # front right
            [-0.2, 0.15, 0.0],   # rear left
            [-0.2, -0.15, 0.0],  # rear right
            [0.0, 0.15, 0.0],    # vertical left
            [0.0, -0.15, 0.0],   # vertical right
        ]
    )
    directions = np.array(
        [
            [c, -c, s],
            [c, c, s],
            [c, c, s],
            [c, -c, s],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 1.0],
        ]
    )
    cfg = ThrusterConfig(positions, directions)
    cfg.validate()
    return cfg


def action_to_pwm(action: np.ndarray, cfg: ThrusterConfig) -> np.ndarray:
    """Map normalized commands in [-1, 1] (clamped) to PWM microseconds."""
    u = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    return cfg.pwm_neutral + cfg.pwm_span * u


def pwm_to_omega(pwm, cfg: ThrusterConfig):
    """Signed propeller speed (rad/s) for a PWM command.

    Deadband-affine: zero inside the deadband, linear out to +-omega_max at
    the span limits.  Scalar or array input.
    """
    pwm = np.asarray(pwm, dtype=float)
    lo, hi = cfg.pwm_neutral - cfg.pwm_span, cfg.pwm_neutral + cfg.pwm_span
    if np.any(pwm < lo) or np.any(pwm > hi):
        raise ParameterError(f"pwm outside [{lo:.0f}, {hi:.0f}] us")
    delta = pwm - cfg.pwm_neutral
    mag = np.maximum(np.abs(delta) - cfg.pwm_deadband, 0.0)
    omega = np.sign(delta) * cfg.omega_max * mag / (cfg.pwm_span - cfg.pwm_deadband)
    return float(omega) if omega.ndim == 0 else omega


def thrust_from_omega(omega, rotor_constant: float):
    """Sign-preserving quadratic thrust (N) from propeller speed."""
    omega = np.asarray(omega, dtype=float)
    thrust = rotor_constant * np.abs(omega) * omega
    return float(thrust) if thrust.ndim == 0 else thrust


def allocate_wrench(thrusts: np.ndarray, cfg: ThrusterConfig) -> Wrench:
    """Sum per-thruster forces into a body wrench using the layout."""
    thrusts = np.asarray(thrusts, dtype=float)
    forces = thrusts[:, None] * cfg.directions
    torques = np.cross(cfg.positions, forces)
    return Wrench(forces.sum(axis=0), torques.sum(axis=0))


def allocation_matrix(cfg: ThrusterConfig) -> np.ndarray:
    """(6, n) map from thrust magnitudes to the body wrench."""
    top = cfg.directions.T
    bottom = np.cross(cfg.positions, cfg.directions).T
    return np.vstack([top, bottom])


def action_wrench(action: np.ndarray, cfg: ThrusterConfig) -> Wrench:
    """Full pipeline: normalized action -> PWM -> speed -> thrust -> wrench."""
    pwm = action_to_pwm(action, cfg)
    omega = pwm_to_omega(pwm, cfg)
    return allocate_wrench(thrust_from_omega(omega, cfg.rotor_constant), cfg)
