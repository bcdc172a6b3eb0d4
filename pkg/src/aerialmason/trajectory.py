"""Minimum-jerk descent trajectories in time-to-go form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import half_sq_norm_trapezoid


class TrajectoryDomainError(ValueError):
    pass


def _v3(x) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(3)
    return a


@dataclass(frozen=True, eq=False)
class BoundaryConditions:
    r0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    rf: np.ndarray
    vf: np.ndarray
    af: np.ndarray
    t_f: float

    @classmethod
    def make(cls, r0, rf, t_f, v0=(0, 0, 0), a0=(0, 0, 0), vf=(0, 0, 0), af=(0, 0, 0)):
        return cls(_v3(r0), _v3(v0), _v3(a0), _v3(rf), _v3(vf), _v3(af), float(t_f))

    def check(self) -> None:
        if not (np.isfinite(self.t_f) and self.t_f > 0):
            raise TrajectoryDomainError(f"t_f must be positive, got {self.t_f}")
        for name in ("r0", "v0", "a0", "rf", "vf", "af"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise TrajectoryDomainError(f"{name} must be finite")


@dataclass(frozen=True, eq=False)
class MinJerkTrajectory:
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    boundary: BoundaryConditions

    @property
    def t_f(self) -> float:
        return self.boundary.t_f


def plan_min_jerk(b: BoundaryConditions) -> MinJerkTrajectory:
    """Closed-form quintic coefficients, evaluated once with t_go = t_f."""
    b.check()
    T = b.t_f
    z_r = b.r0 - b.rf + b.vf * T - 0.5 * b.af * T**2
    z_v = b.v0 - b.vf + b.af * T
    z_a = b.a0 - b.af
    c1 = 10 / T**3 * z_r + 4 / T**2 * z_v + 1 / (2 * T) * z_a
    c2 = -15 / T**4 * z_r - 7 / T**3 * z_v - 1 / T**2 * z_a
    c3 = 6 / T**5 * z_r + 3 / T**4 * z_v + 1 / (2 * T**3) * z_a
    return MinJerkTrajectory(c1, c2, c3, b)


def _check_time(traj: MinJerkTrajectory, t, clamp: bool) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if clamp:
        return np.clip(t, 0.0, traj.t_f)
    if np.any(t < 0.0) or np.any(t > traj.t_f) or not np.all(np.isfinite(t)):
        raise TrajectoryDomainError(f"t must lie in [0, {traj.t_f}]")
    return t


def sample(traj: MinJerkTrajectory, t, clamp: bool = False):
    """Position, velocity and acceleration at time ``t`` since maneuver start.

    ``t`` may be a scalar or a 1-D array; arrays give ``(n, 3)`` outputs.
    With ``clamp`` the terminal state is held for ``t > t_f``.
    """
    t = _check_time(traj, t, clamp)
    b = traj.boundary
    tg = (traj.t_f - t)[..., None]
    c1, c2, c3 = traj.c1, traj.c2, traj.c3
    pos = c3 * tg**5 + c2 * tg**4 + c1 * tg**3 + b.af * tg**2 / 2 - b.vf * tg + b.rf
    # d/dt = -d/dt_go
    vel = -(5 * c3 * tg**4 + 4 * c2 * tg**3 + 3 * c1 * tg**2 + b.af * tg - b.vf)
    acc = 20 * c3 * tg**3 + 12 * c2 * tg**2 + 6 * c1 * tg + b.af
    return pos, vel, acc


def jerk(traj: MinJerkTrajectory, t) -> np.ndarray:
    t = _check_time(traj, t, False)
    tg = (traj.t_f - t)[..., None]
    return -(60 * traj.c3 * tg**2 + 24 * traj.c2 * tg + 6 * traj.c1)


def jerk_cost(path, t=None, resolution: float = 1e-3) -> float:
    """0.5 * integral of |jerk|^2, by the trapezoidal rule.

    ``path`` is either a :class:`MinJerkTrajectory` (jerk sampled analytically
    every ``resolution`` seconds) or an ``(n, 3)`` array of positions sampled
    at times ``t``, differentiated numerically.
    """
    if isinstance(path, MinJerkTrajectory):
        n = max(4, int(np.ceil(path.t_f / resolution)) + 1)
        ts = np.linspace(0.0, path.t_f, n)
        return float(half_sq_norm_trapezoid(np.ascontiguousarray(jerk(path, ts)), ts))

    pos = np.asarray(path, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    if t is None:
        raise TrajectoryDomainError("sample times are required for a sampled path")
    t = np.asarray(t, dtype=float)
    if pos.shape[0] < 4 or t.shape[0] != pos.shape[0]:
        raise TrajectoryDomainError("need at least 4 samples with matching times")
    j = pos
    for _ in range(3):
        j = np.gradient(j, t, axis=0, edge_order=2)
    return float(half_sq_norm_trapezoid(np.ascontiguousarray(j), t))


def dump_csv(traj: MinJerkTrajectory, dt: float, t0: float = 0.0) -> str:
    """CSV text ``t,x,y,z,vx,vy,vz,ax,ay,az`` sampled every ``dt``."""
    n = int(np.floor(traj.t_f / dt + 1e-9)) + 1
    ts = np.arange(n) * dt
    pos, vel, acc = sample(traj, ts, clamp=True)
    rows = ["t,x,y,z,vx,vy,vz,ax,ay,az"]
    for k in range(n):
        vals = [t0 + ts[k], *pos[k], *vel[k], *acc[k]]
        rows.append(",".join(f"{v:.6f}" for v in vals))
    return "\n".join(rows) + "\n"
