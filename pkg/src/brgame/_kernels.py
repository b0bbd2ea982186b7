"""Compiled batch rollouts used by the planner's inner sampling loop.

The plain-numpy functions in :mod:`brgame.world` and :mod:`brgame.policy`
define the semantics; these kernels must agree with them and the tests check
that sample by sample.
"""
import math

import numpy as np
from numba import njit

UNIFORM = 0
INFORMED = 1


@njit(cache=True, inline="always")
def _clamp3(ax, ay, az, a_min, a_max):
    n2 = ax * ax + ay * ay + az * az
    if n2 > a_max * a_max:
        s = a_max / math.sqrt(n2)
        return ax * s, ay * s, az * s
    if a_min > 0.0 and 0.0 < n2 < a_min * a_min:
        s = a_min / math.sqrt(n2)
        return ax * s, ay * s, az * s
    return ax, ay, az


@njit(cache=True, inline="always")
def _step_reward(px, py, pz, gx, gy, gz, others_k, obstacles, w_goal, w_col, r_agent, r_safe):
    dx = px - gx
    dy = py - gy
    dz = pz - gz
    r = -w_goal * math.sqrt(dx * dx + dy * dy + dz * dz)
    for m in range(obstacles.shape[0]):
        ox = px - obstacles[m, 0]
        oy = py - obstacles[m, 1]
        oz = pz - obstacles[m, 2]
        if math.sqrt(ox * ox + oy * oy + oz * oz) - obstacles[m, 3] < r_agent:
            return r - w_col
    for j in range(others_k.shape[0]):
        ox = px - others_k[j, 0]
        oy = py - others_k[j, 1]
        oz = pz - others_k[j, 2]
        if math.sqrt(ox * ox + oy * oy + oz * oz) < r_safe:
            return r - w_col
    return r


@njit(cache=True, nogil=True)
def sample_rollouts(start, means, goal, others, obstacles, lo, hi,
                    prior_kind, gain, unit_weight, sigma, a_min, a_max, dt,
                    w_goal, w_col, r_agent, r_safe, z, u, d0, d1,
                    out_actions, out_utils):
    """Closed-loop perturbed rollouts for samples ``d0 <= d < d1``.

    ``others`` is ``(H + 1, N - 1, 3)``: frozen trajectories of every other
    agent. ``z`` holds standard normals ``(D, H, 3)``; ``u`` uniforms
    ``(D, H)`` (read only by the uniform prior). Writes the unclamped sampled
    actions (mean plus prior offset) and the H + 1 term utility of each
    sample; the dynamics apply the clamped action.
    """
    H = means.shape[0]
    for d in range(d0, d1):
        px = start[0]
        py = start[1]
        pz = start[2]
        total = 0.0
        for k in range(H):
            total += _step_reward(px, py, pz, goal[0], goal[1], goal[2], others[k], obstacles,
                                  w_goal, w_col, r_agent, r_safe)
            if prior_kind == UNIFORM:
                zx = z[d, k, 0]
                zy = z[d, k, 1]
                zz = z[d, k, 2]
                zn = math.sqrt(zx * zx + zy * zy + zz * zz)
                if zn > 0.0:
                    rad = a_max * u[d, k] ** (1.0 / 3.0) / zn
                else:
                    rad = 0.0
                ddx = zx * rad
                ddy = zy * rad
                ddz = zz * rad
            else:
                ex = goal[0] - px
                ey = goal[1] - py
                ez = goal[2] - pz
                dist = math.sqrt(ex * ex + ey * ey + ez * ez)
                ddx = gain * ex
                ddy = gain * ey
                ddz = gain * ez
                if dist > 0.0 and unit_weight != 0.0:
                    ddx += unit_weight * ex / dist
                    ddy += unit_weight * ey / dist
                    ddz += unit_weight * ez / dist
                ddx, ddy, ddz = _clamp3(ddx, ddy, ddz, 0.0, a_max)
                ddx += sigma * z[d, k, 0]
                ddy += sigma * z[d, k, 1]
                ddz += sigma * z[d, k, 2]
            rx = means[k, 0] + ddx
            ry = means[k, 1] + ddy
            rz = means[k, 2] + ddz
            ax, ay, az = _clamp3(rx, ry, rz, a_min, a_max)
            out_actions[d, k, 0] = rx
            out_actions[d, k, 1] = ry
            out_actions[d, k, 2] = rz
            px = min(max(px + ax * dt, lo[0]), hi[0])
            py = min(max(py + ay * dt, lo[1]), hi[1])
            pz = min(max(pz + az * dt, lo[2]), hi[2])
        total += _step_reward(px, py, pz, goal[0], goal[1], goal[2], others[H], obstacles,
                              w_goal, w_col, r_agent, r_safe)
        out_utils[d] = total


@njit(cache=True, nogil=True)
def sequence_utilities(start, seqs, goal, others, obstacles, lo, hi, a_min, a_max, dt,
                       w_goal, w_col, r_agent, r_safe, out_utils):
    """Open-loop utilities of explicit action sequences ``(S, H, 3)``."""
    H = seqs.shape[1]
    for s in range(seqs.shape[0]):
        px = start[0]
        py = start[1]
        pz = start[2]
        total = 0.0
        for k in range(H):
            total += _step_reward(px, py, pz, goal[0], goal[1], goal[2], others[k], obstacles,
                                  w_goal, w_col, r_agent, r_safe)
            ax, ay, az = _clamp3(seqs[s, k, 0], seqs[s, k, 1], seqs[s, k, 2], a_min, a_max)
            px = min(max(px + ax * dt, lo[0]), hi[0])
            py = min(max(py + ay * dt, lo[1]), hi[1])
            pz = min(max(pz + az * dt, lo[2]), hi[2])
        total += _step_reward(px, py, pz, goal[0], goal[1], goal[2], others[H], obstacles,
                              w_goal, w_col, r_agent, r_safe)
        out_utils[s] = total


def warmup():
    """Trigger compilation on tiny inputs."""
    H = 2
    start = np.zeros(3)
    means = np.zeros((H, 3))
    others = np.zeros((H + 1, 0, 3))
    obstacles = np.zeros((0, 4))
    lo = np.zeros(3)
    hi = np.ones(3)
    z = np.zeros((1, H, 3))
    u = np.zeros((1, H))
    acts = np.empty((1, H, 3))
    utils = np.empty(1)
    for kind in (UNIFORM, INFORMED):
        sample_rollouts(start, means, start, others, obstacles, lo, hi, kind, 1.0, 0.0, 0.5,
                        0.0, 1.0, 0.1, 1.0, 100.0, 0.15, 0.4, z, u, 0, 1, acts, utils)
    sequence_utilities(start, means[None], start, others, obstacles, lo, hi, 0.0, 1.0, 0.1,
                       1.0, 100.0, 0.15, 0.4, utils)
