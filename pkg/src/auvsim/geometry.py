"""Quaternion math, rigid-body state, and the fixed-step integrator.

Conventions used throughout the package:

* 3-vectors are float64 numpy arrays of shape (3,).
* Quaternions are float64 arrays of shape (4,), scalar-first (w, x, y, z),
  unit norm, and encode the body-to-world rotation.
* Linear and angular velocity are stored in the body frame.
* The world frame is z-up; the body frame is x-forward, y-left, z-up.

All functions here are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationDiverged

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass
class Wrench:
    """A body-frame force (N) and torque (N*m) pair."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __add__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.force + other.force, self.torque + other.torque)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.force).all() and np.isfinite(self.torque).all())


@dataclass
class RigidBodyState:
    """Pose and body-frame velocities of a single vehicle."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    lin_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ang_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "RigidBodyState":
        return RigidBodyState(
            self.position.copy(),
            self.orientation.copy(),
            self.lin_vel.copy(),
            self.ang_vel.copy(),
        )

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.position).all()
            and np.isfinite(self.orientation).all()
            and np.isfinite(self.lin_vel).all()
            and np.isfinite(self.ang_vel).all()
        )


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / math.sqrt(float(q @ q))


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q (body to world)."""
    qv = q[1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[0] * t + np.cross(qv, t)


def quat_rotate_inv(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by the inverse of unit quaternion q (world to body)."""
    return quat_rotate(quat_conj(q), v)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / math.sqrt(float(axis @ axis))
    h = 0.5 * angle
    s = math.sin(h)
    return np.array([math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Quaternion exponential of a rotation vector (axis * angle, rad)."""
    angle = math.sqrt(float(rv @ rv))
    if angle < 1e-10:
        # first-order expansion; renormalized so the result stays unit
        return quat_normalize(np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]]))
    s = math.sin(0.5 * angle) / angle
    return np.array([math.cos(0.5 * angle), rv[0] * s, rv[1] * s, rv[2] * s])


def quat_angle_between(q_des: np.ndarray, q: np.ndarray) -> float:
    """Rotation angle (rad, in [0, pi]) separating two unit quaternions.

    Measured as the axis-angle magnitude of q_des * conj(q).  Using the
    absolute scalar part makes the result identical for q and -q.
    """
    d = quat_mul(q_des, quat_conj(q))
    return 2.0 * math.atan2(math.sqrt(float(d[1:] @ d[1:])), abs(float(d[0])))


def quat_slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Great-circle interpolation from q0 (t=0) to q1 (t=1), shortest path."""
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-9:
        # nearly parallel: spherical weights are ill-conditioned, lerp instead
        return quat_normalize(q0 + t * (q1 - q0))
    omega = math.acos(min(dot, 1.0))
    so = math.sin(omega)
    a = math.sin((1.0 - t) * omega) / so
    b = math.sin(t * omega) / so
    return quat_normalize(a * q0 + b * q1)


def integrate_step(state: RigidBodyState, wrench: Wrench, params, dt: float) -> RigidBodyState:
    """Advance a rigid body one step of semi-implicit Euler.

    Velocities are updated from the body-frame wrench first (including the
    gyroscopic term for the angular part), then position advances with the
    new linear velocity rotated to the world frame and orientation advances
    by the quaternion exponential of the new angular velocity.

    Raises SimulationDiverged when the wrench is non-finite.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not wrench.is_finite():
        raise SimulationDiverged("non-finite wrench applied to rigid body")

    inertia = params.inertia
    v = state.lin_vel + (wrench.force / params.mass) * dt
    spin = inertia @ state.ang_vel
    torque_eff = wrench.torque - np.cross(state.ang_vel, spin)
    w = state.ang_vel + np.linalg.solve(inertia, torque_eff) * dt

    position = state.position + quat_rotate(state.orientation, v) * dt
    orientation = quat_normalize(quat_mul(state.orientation, quat_from_rotvec(w * dt)))
    return RigidBodyState(position, orientation, v, w)
