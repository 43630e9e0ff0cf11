"""Hydrodynamic force model: drag, viscous, buoyancy, and gravity wrenches.

The drag model treats the vehicle as a rectangular prism whose half side
lengths are recovered from the inertia matrix; quadratic drag acts on the
prism faces and linear viscous resistance acts on an equivalent sphere.
Buoyancy applies rho*V*g upward at the center of buoyancy, gravity applies
M*g downward at the center of mass (the body origin).

All quantities are SI; forces and torques are returned in the body frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .geometry import RigidBodyState, Wrench, quat_rotate_inv
from .thrusters import ThrusterConfig, default_thrusters

#: Default physical constants for the simulated vehicle.
WATER_DENSITY = 997.0        # kg/m^3
WATER_VISCOSITY = 0.001306   # Pa*s
VEHICLE_MASS = 22.701        # kg
VEHICLE_VOLUME = 0.02275     # m^3
COB_OFFSET = (-0.05, 0.0, 0.01)  # m, body frame, COM -> COB
GRAVITY = 9.81               # m/s^2
#: Half side lengths (m) used for the default box-approximated inertia; the
#: real vehicle's inertia is not published, so this stand-in is config-exposed.
DEFAULT_BOX_HALF_EXTENTS = (0.3, 0.2, 0.15)

_AXES = "xyz"


def box_inertia(mass: float, half_extents) -> np.ndarray:
    """Diagonal inertia of a uniform box with the given half side lengths."""
    rx, ry, rz = half_extents
    k = mass / 3.0
    return np.diag([k * (ry**2 + rz**2), k * (rx**2 + rz**2), k * (rx**2 + ry**2)])


@dataclass
class VehicleParams:
    """Physical parameters of one vehicle instance."""

    mass: float = VEHICLE_MASS
    inertia: np.ndarray = field(
        default_factory=lambda: box_inertia(VEHICLE_MASS, DEFAULT_BOX_HALF_EXTENTS)
    )
    volume: float = VEHICLE_VOLUME
    cob_offset: np.ndarray = field(default_factory=lambda: np.array(COB_OFFSET))
    water_density: float = WATER_DENSITY
    water_viscosity: float = WATER_VISCOSITY
    gravity: float = GRAVITY
    thrusters: ThrusterConfig = field(default_factory=default_thrusters)

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.cob_offset = np.asarray(self.cob_offset, dtype=float)

    def validate(self) -> None:
        if self.mass <= 0:
            raise ParameterError(f"mass must be > 0, got {self.mass}")
        if self.volume < 0:
            raise ParameterError(f"volume must be >= 0, got {self.volume}")
        if self.water_density <= 0:
            raise ParameterError(f"water_density must be > 0, got {self.water_density}")
        if self.water_viscosity < 0:
            raise ParameterError(f"water_viscosity must be >= 0, got {self.water_viscosity}")
        if self.gravity < 0:
            raise ParameterError(f"gravity must be >= 0, got {self.gravity}")
        if self.inertia.shape != (3, 3) or not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
            raise ParameterError("inertia must be a symmetric 3x3 matrix")
        if np.any(np.linalg.eigvalsh(self.inertia) <= 0):
            raise ParameterError("inertia must be positive-definite")
        equivalent_radii(self.mass, self.inertia)  # realizability: no negative radicand
        self.thrusters.validate()

    def replace(self, **overrides) -> "VehicleParams":
        """Copy with selected fields replaced (arrays are copied)."""
        kwargs = dict(
            mass=self.mass,
            inertia=self.inertia.copy(),
            volume=self.volume,
            cob_offset=self.cob_offset.copy(),
            water_density=self.water_density,
            water_viscosity=self.water_viscosity,
            gravity=self.gravity,
            thrusters=self.thrusters,
        )
        kwargs.update(overrides)
        return VehicleParams(**kwargs)


@dataclass(frozen=True)
class EquivalentBox:
    """Half side lengths (m) of the drag surrogate box and its mean radius."""

    r_x: float
    r_y: float
    r_z: float

    @property
    def r_eq(self) -> float:
        return (self.r_x + self.r_y + self.r_z) / 3.0

    @property
    def radii(self) -> np.ndarray:
        return np.array([self.r_x, self.r_y, self.r_z])


def equivalent_radii(mass: float, inertia: np.ndarray) -> EquivalentBox:
    """Recover box half side lengths from mass and inertia.

    r_i = sqrt(3 * (I_jj + I_kk - I_ii) / (2 M)) for cyclic (i, j, k).  For a
    uniform box this inverts the analytic inertia formula exactly.
    """
    d = np.diagonal(np.asarray(inertia, dtype=float))
    out = []
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        radicand = 1.5 * (d[j] + d[k] - d[i]) / mass
        if radicand < 0:
            raise ParameterError(
                f"inertia not physically realizable: I_{_AXES[j]}{_AXES[j]} + "
                f"I_{_AXES[k]}{_AXES[k]} - I_{_AXES[i]}{_AXES[i]} < 0 (axis {_AXES[i]})"
            )
        out.append(math.sqrt(radicand))
    return EquivalentBox(*out)


def drag_wrench(box: EquivalentBox, lin_vel: np.ndarray, ang_vel: np.ndarray, water_density: float) -> Wrench:
    """Quadratic pressure drag on the equivalent box, componentwise.

    force_i  = -2 rho r_j r_k |v_i| v_i
    torque_i = -(1/2) rho r_i (r_j^4 + r_k^4) |w_i| w_i
    """
    r = box.radii
    force = np.empty(3)
    torque = np.empty(3)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        force[i] = -2.0 * water_density * r[j] * r[k] * abs(lin_vel[i]) * lin_vel[i]
        torque[i] = -0.5 * water_density * r[i] * (r[j] ** 4 + r[k] ** 4) * abs(ang_vel[i]) * ang_vel[i]
    return Wrench(force, torque)


def viscous_wrench(box: EquivalentBox, lin_vel: np.ndarray, ang_vel: np.ndarray, water_viscosity: float) -> Wrench:
    """Linear (Stokes-like) resistance on the equivalent sphere.

    force  = -6 beta pi r_eq v
    torque = -8 beta pi r_eq^3 w
    """
    r_eq = box.r_eq
    force = -6.0 * water_viscosity * math.pi * r_eq * np.asarray(lin_vel, dtype=float)
    torque = -8.0 * water_viscosity * math.pi * r_eq**3 * np.asarray(ang_vel, dtype=float)
    return Wrench(force, torque)


def buoyancy_wrench(orientation: np.ndarray, params: VehicleParams) -> Wrench:
    """Upward rho*V*g applied at the center of buoyancy, in body frame."""
    magnitude = params.water_density * params.volume * params.gravity
    force = quat_rotate_inv(orientation, np.array([0.0, 0.0, magnitude]))
    torque = np.cross(params.cob_offset, force)
    return Wrench(force, torque)


def gravity_wrench(orientation: np.ndarray, params: VehicleParams) -> Wrench:
    """Weight at the center of mass: no torque about the body origin."""
    force = quat_rotate_inv(orientation, np.array([0.0, 0.0, -params.mass * params.gravity]))
    return Wrench(force, np.zeros(3))


def total_hydro_wrench(state: RigidBodyState, params: VehicleParams) -> Wrench:
    """Sum of drag, viscous, buoyancy, and gravity wrenches (no thrust)."""
    box = equivalent_radii(params.mass, params.inertia)
    total = drag_wrench(box, state.lin_vel, state.ang_vel, params.water_density)
    total += viscous_wrench(box, state.lin_vel, state.ang_vel, params.water_viscosity)
    total += buoyancy_wrench(state.orientation, params)
    total += gravity_wrench(state.orientation, params)
    return total


def kinetic_energy(state: RigidBodyState, params: VehicleParams) -> float:
    """Total kinetic energy 1/2 M |v|^2 + 1/2 w^T I w (J)."""
    lin = 0.5 * params.mass * float(state.lin_vel @ state.lin_vel)
    ang = 0.5 * float(state.ang_vel @ (params.inertia @ state.ang_vel))
    return lin + ang
