"""Batched environment stepping compiled with numba.

Every environment is advanced with scalar per-env arithmetic inside a
``prange`` loop; there are no cross-env reads, writes, or reductions.  As
a consequence trajectories are bitwise identical regardless of worker
count and of how envs are grouped into batches, which is what the
batch/serial equivalence and seed-determinism guarantees rest on.

NUMBA_NUM_THREADS is raised before numba is imported so that more workers
than physical cores can be requested (needed for worker-scaling runs on
small machines); the actual worker count is set per batch via
``set_workers``.  This module must therefore be imported before any other
module imports numba.
"""

import math
import os

os.environ.setdefault("NUMBA_NUM_THREADS", str(max(16, os.cpu_count() or 1)))

import numba
from numba import njit, prange

OBS_DIM = 17
ACT_DIM = 6


def max_workers() -> int:
    return numba.config.NUMBA_NUM_THREADS


def set_workers(n: int) -> None:
    """Set the number of threads the step kernel fans envs across."""
    if not 1 <= n <= max_workers():
        raise ValueError(f"workers must be in [1, {max_workers()}], got {n}")
    numba.set_num_threads(n)


@njit(cache=True, parallel=True)
def step_batch(
    pos, quat, lin_vel, ang_vel, cob, vol, goal_pos, goal_quat, actions,
    n_sub, dt,
    mass, inertia, inertia_inv, rx, ry, rz, rho, beta, grav,
    thr_pos, thr_dir, rotor_c, omega_max, pwm_neutral, pwm_span, pwm_deadband,
    offset_clip, w_pos, w_orn, w_pow,
    obs_out, rew_out, bad_out,
):
    n = pos.shape[0]
    n_thr = thr_pos.shape[0]

    r_eq = (rx + ry + rz) / 3.0
    visc_f = 6.0 * beta * math.pi * r_eq
    visc_g = 8.0 * beta * math.pi * r_eq**3
    drag_fx = 2.0 * rho * ry * rz
    drag_fy = 2.0 * rho * rx * rz
    drag_fz = 2.0 * rho * rx * ry
    drag_gx = 0.5 * rho * rx * (ry**4 + rz**4)
    drag_gy = 0.5 * rho * ry * (rx**4 + rz**4)
    drag_gz = 0.5 * rho * rz * (rx**4 + ry**4)
    omega_gain = omega_max / (pwm_span - pwm_deadband)

    for e in prange(n):
        # thrust wrench for the action held over this control step
        tfx = tfy = tfz = ttx = tty = ttz = 0.0
        act_sq = 0.0
        for k in range(n_thr):
            u = actions[e, k]
            if u > 1.0:
                u = 1.0
            elif u < -1.0:
                u = -1.0
            act_sq += u * u
            delta = pwm_span * u
            mag = abs(delta) - pwm_deadband
            if mag <= 0.0:
                omg = 0.0
            elif delta >= 0.0:
                omg = omega_gain * mag
            else:
                omg = -omega_gain * mag
            thrust = rotor_c * abs(omg) * omg
            fx = thrust * thr_dir[k, 0]
            fy = thrust * thr_dir[k, 1]
            fz = thrust * thr_dir[k, 2]
            tfx += fx
            tfy += fy
            tfz += fz
            ttx += thr_pos[k, 1] * fz - thr_pos[k, 2] * fy
            tty += thr_pos[k, 2] * fx - thr_pos[k, 0] * fz
            ttz += thr_pos[k, 0] * fy - thr_pos[k, 1] * fx

        px = pos[e, 0]
        py = pos[e, 1]
        pz = pos[e, 2]
        qw = quat[e, 0]
        qx = quat[e, 1]
        qy = quat[e, 2]
        qz = quat[e, 3]
        vx = lin_vel[e, 0]
        vy = lin_vel[e, 1]
        vz = lin_vel[e, 2]
        wx = ang_vel[e, 0]
        wy = ang_vel[e, 1]
        wz = ang_vel[e, 2]
        cbx = cob[e, 0]
        cby = cob[e, 1]
        cbz = cob[e, 2]
        buoy = rho * vol[e] * grav
        weight = mass * grav

        for _ in range(n_sub):
            # drag + viscous resistance (body frame)
            fx = -drag_fx * abs(vx) * vx - visc_f * vx + tfx
            fy = -drag_fy * abs(vy) * vy - visc_f * vy + tfy
            fz = -drag_fz * abs(vz) * vz - visc_f * vz + tfz
            gx = -drag_gx * abs(wx) * wx - visc_g * wx + ttx
            gy = -drag_gy * abs(wy) * wy - visc_g * wy + tty
            gz = -drag_gz * abs(wz) * wz - visc_g * wz + ttz

            # world up axis expressed in the body frame (third row of R)
            upx = 2.0 * (qx * qz - qw * qy)
            upy = 2.0 * (qy * qz + qw * qx)
            upz = 1.0 - 2.0 * (qx * qx + qy * qy)

            # buoyancy at the COB, weight at the COM
            bfx = buoy * upx
            bfy = buoy * upy
            bfz = buoy * upz
            fx += bfx - weight * upx
            fy += bfy - weight * upy
            fz += bfz - weight * upz
            gx += cby * bfz - cbz * bfy
            gy += cbz * bfx - cbx * bfz
            gz += cbx * bfy - cby * bfx

            # semi-implicit Euler: velocities first
            vx += fx / mass * dt
            vy += fy / mass * dt
            vz += fz / mass * dt

            sx = inertia[0, 0] * wx + inertia[0, 1] * wy + inertia[0, 2] * wz
            sy = inertia[1, 0] * wx + inertia[1, 1] * wy + inertia[1, 2] * wz
            sz = inertia[2, 0] * wx + inertia[2, 1] * wy + inertia[2, 2] * wz
            gx -= wy * sz - wz * sy
            gy -= wz * sx - wx * sz
            gz -= wx * sy - wy * sx
            wx += (inertia_inv[0, 0] * gx + inertia_inv[0, 1] * gy + inertia_inv[0, 2] * gz) * dt
            wy += (inertia_inv[1, 0] * gx + inertia_inv[1, 1] * gy + inertia_inv[1, 2] * gz) * dt
            wz += (inertia_inv[2, 0] * gx + inertia_inv[2, 1] * gy + inertia_inv[2, 2] * gz) * dt

            # position from the new velocity rotated by the current attitude
            px += (
                (1.0 - 2.0 * (qy * qy + qz * qz)) * vx
                + 2.0 * (qx * qy - qw * qz) * vy
                + 2.0 * (qx * qz + qw * qy) * vz
            ) * dt
            py += (
                2.0 * (qx * qy + qw * qz) * vx
                + (1.0 - 2.0 * (qx * qx + qz * qz)) * vy
                + 2.0 * (qy * qz - qw * qx) * vz
            ) * dt
            pz += (
                2.0 * (qx * qz - qw * qy) * vx
                + 2.0 * (qy * qz + qw * qx) * vy
                + (1.0 - 2.0 * (qx * qx + qy * qy)) * vz
            ) * dt

            # attitude increment: quaternion exponential of w * dt
            rvx = wx * dt
            rvy = wy * dt
            rvz = wz * dt
            angle = math.sqrt(rvx * rvx + rvy * rvy + rvz * rvz)
            if angle < 1e-10:
                dw = 1.0
                s = 0.5
            else:
                dw = math.cos(0.5 * angle)
                s = math.sin(0.5 * angle) / angle
            dx = rvx * s
            dy = rvy * s
            dz = rvz * s
            nw = qw * dw - qx * dx - qy * dy - qz * dz
            nx = qw * dx + qx * dw + qy * dz - qz * dy
            ny = qw * dy - qx * dz + qy * dw + qz * dx
            nz = qw * dz + qx * dy - qy * dx + qz * dw
            inv_norm = 1.0 / math.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
            qw = nw * inv_norm
            qx = nx * inv_norm
            qy = ny * inv_norm
            qz = nz * inv_norm

        pos[e, 0] = px
        pos[e, 1] = py
        pos[e, 2] = pz
        quat[e, 0] = qw
        quat[e, 1] = qx
        quat[e, 2] = qy
        quat[e, 3] = qz
        lin_vel[e, 0] = vx
        lin_vel[e, 1] = vy
        lin_vel[e, 2] = vz
        ang_vel[e, 0] = wx
        ang_vel[e, 1] = wy
        ang_vel[e, 2] = wz

        # observation: goal offset in the local frame, clipped in norm
        ex = goal_pos[e, 0] - px
        ey = goal_pos[e, 1] - py
        ez = goal_pos[e, 2] - pz
        ox = (1.0 - 2.0 * (qy * qy + qz * qz)) * ex + 2.0 * (qx * qy + qw * qz) * ey + 2.0 * (qx * qz - qw * qy) * ez
        oy = 2.0 * (qx * qy - qw * qz) * ex + (1.0 - 2.0 * (qx * qx + qz * qz)) * ey + 2.0 * (qy * qz + qw * qx) * ez
        oz = 2.0 * (qx * qz + qw * qy) * ex + 2.0 * (qy * qz - qw * qx) * ey + (1.0 - 2.0 * (qx * qx + qy * qy)) * ez
        off_norm = math.sqrt(ox * ox + oy * oy + oz * oz)
        if off_norm > offset_clip:
            scale = offset_clip / off_norm
            ox *= scale
            oy *= scale
            oz *= scale

        obs_out[e, 0] = ox
        obs_out[e, 1] = oy
        obs_out[e, 2] = oz
        obs_out[e, 3] = goal_quat[e, 0]
        obs_out[e, 4] = goal_quat[e, 1]
        obs_out[e, 5] = goal_quat[e, 2]
        obs_out[e, 6] = goal_quat[e, 3]
        obs_out[e, 7] = qw
        obs_out[e, 8] = qx
        obs_out[e, 9] = qy
        obs_out[e, 10] = qz
        obs_out[e, 11] = vx
        obs_out[e, 12] = vy
        obs_out[e, 13] = vz
        obs_out[e, 14] = wx
        obs_out[e, 15] = wy
        obs_out[e, 16] = wz

        # reward: position, orientation, and energy terms
        dqw = goal_quat[e, 0] * qw + goal_quat[e, 1] * qx + goal_quat[e, 2] * qy + goal_quat[e, 3] * qz
        dqx = -goal_quat[e, 0] * qx + goal_quat[e, 1] * qw - goal_quat[e, 2] * qz + goal_quat[e, 3] * qy
        dqy = -goal_quat[e, 0] * qy + goal_quat[e, 1] * qz + goal_quat[e, 2] * qw - goal_quat[e, 3] * qx
        dqz = -goal_quat[e, 0] * qz - goal_quat[e, 1] * qy + goal_quat[e, 2] * qx + goal_quat[e, 3] * qw
        angle = 2.0 * math.atan2(math.sqrt(dqx * dqx + dqy * dqy + dqz * dqz), abs(dqw))
        reward = (
            w_pos * math.exp(-(ox * ox + oy * oy + oz * oz))
            + w_orn * math.exp(-angle)
            + w_pow * math.exp(-act_sq)
        )

        ok = (
            math.isfinite(px) and math.isfinite(py) and math.isfinite(pz)
            and math.isfinite(qw) and math.isfinite(qx) and math.isfinite(qy) and math.isfinite(qz)
            and math.isfinite(vx) and math.isfinite(vy) and math.isfinite(vz)
            and math.isfinite(wx) and math.isfinite(wy) and math.isfinite(wz)
        )
        if ok:
            rew_out[e] = reward
            bad_out[e] = 0
        else:
            rew_out[e] = 0.0
            bad_out[e] = 1
