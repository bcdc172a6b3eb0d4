"""Hot numeric kernels.

Everything here is written in the numpy subset numba understands, so the same
source runs compiled (default) or interpreted when ``AERIALMASON_NUMBA=0``.
Arrays are float64; 3-vectors are shape ``(3,)``.
"""

import numpy as np

from ._jit import njit

# ---------------------------------------------------------------------------
# marker-pair filter
# ---------------------------------------------------------------------------


@njit
def marker_cost(x, m1, m2, d, w_prox, w_dist, w_plane):
    p1 = x[:3]
    p2 = x[3:]
    e1 = p1 - m1
    e2 = p2 - m2
    diff = p1 - p2
    sep = np.sqrt(np.dot(diff, diff))
    return (w_prox * (np.dot(e1, e1) + np.dot(e2, e2))
            + w_dist * (sep - d) ** 2
            + w_plane * diff[2] ** 2)


@njit
def marker_grad(x, m1, m2, d, w_prox, w_dist, w_plane):
    p1 = x[:3]
    p2 = x[3:]
    diff = p1 - p2
    sep = np.sqrt(np.dot(diff, diff))
    g = np.empty(6)
    g[:3] = 2.0 * w_prox * (p1 - m1)
    g[3:] = 2.0 * w_prox * (p2 - m2)
    if sep > 0.0:
        k = 2.0 * w_dist * (sep - d) / sep
        g[:3] += k * diff
        g[3:] -= k * diff
    kz = 2.0 * w_plane * diff[2]
    g[2] += kz
    g[5] -= kz
    return g


@njit
def bfgs_marker_pair(m1, m2, d, w_prox, w_dist, w_plane, max_iter, gtol):
    """Minimize the marker-pair cost with BFGS started at the measurements.

    Returns ``(x, converged, iterations)`` with ``x = [p1, p2]``.
    """
    x = np.empty(6)
    x[:3] = m1
    x[3:] = m2
    diff = m1 - m2
    if np.sqrt(np.dot(diff, diff)) < 1e-12:
        # rotationally degenerate start; separate along +x
        x[0] += 5e-7
        x[3] -= 5e-7

    f = marker_cost(x, m1, m2, d, w_prox, w_dist, w_plane)
    g = marker_grad(x, m1, m2, d, w_prox, w_dist, w_plane)
    H = np.eye(6)
    first = True
    for it in range(max_iter + 1):
        gnorm = np.sqrt(np.dot(g, g))
        if gnorm < gtol:
            return x, True, it
        if it == max_iter:
            break
        p = -(H @ g)
        slope = np.dot(g, p)
        if slope >= 0.0:
            H = np.eye(6)
            p = -g
            slope = -np.dot(g, g)

        alpha = 1.0
        accepted = False
        x_new = x + p
        f_new = f
        for _ in range(60):
            x_new = x + alpha * p
            f_new = marker_cost(x_new, m1, m2, d, w_prox, w_dist, w_plane)
            if f_new <= f + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # cost differences below roundoff; accept the full step if it
            # reduces the gradient instead
            x_new = x + p
            f_new = marker_cost(x_new, m1, m2, d, w_prox, w_dist, w_plane)
        g_new = marker_grad(x_new, m1, m2, d, w_prox, w_dist, w_plane)
        if not accepted and np.sqrt(np.dot(g_new, g_new)) >= gnorm:
            break

        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-300:
            if first:
                H = np.eye(6) * (sy / np.dot(y, y))
                first = False
            rho = 1.0 / sy
            A = np.eye(6) - rho * np.outer(s, y)
            H = A @ H @ A.T + rho * np.outer(s, s)
        x = x_new
        f = f_new
        g = g_new
    return x, False, max_iter


# ---------------------------------------------------------------------------
# vehicle
# ---------------------------------------------------------------------------


@njit
def pid_velocity_step(pos, vel, integ, target, target_vel, kp, ki, kd,
                      v_max, tau, i_clamp, dt):
    """Outer PID on position producing a velocity command, inner first-order lag.

    Updates ``pos``, ``vel`` and ``integ`` in place.
    """
    err = target - pos
    v_cmd = target_vel + kp * err + ki * integ + kd * (target_vel - vel)
    speed = np.sqrt(np.dot(v_cmd, v_cmd))
    if speed > v_max:
        v_cmd *= v_max / speed
    else:
        # conditional integration: no windup while saturated
        for i in range(3):
            integ[i] = min(max(integ[i] + err[i] * dt, -i_clamp), i_clamp)
    alpha = 1.0 - np.exp(-dt / tau)
    for i in range(3):
        vel[i] += alpha * (v_cmd[i] - vel[i])
        pos[i] += vel[i] * dt


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


@njit
def half_sq_norm_trapezoid(values, t):
    """Trapezoidal integral of 0.5*|v(t)|^2 over rows of ``values``."""
    total = 0.0
    prev = 0.5 * np.dot(values[0], values[0])
    for k in range(1, values.shape[0]):
        cur = 0.5 * np.dot(values[k], values[k])
        total += 0.5 * (prev + cur) * (t[k] - t[k - 1])
        prev = cur
    return total
