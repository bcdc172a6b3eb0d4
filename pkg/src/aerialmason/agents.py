"""Vehicle model and the two hierarchical task state machines."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .blueprint import MissionParams, Task
from .kernels import pid_velocity_step
from .perception import (CameraModel, ConfidenceWindow, FilterWeights, MarkerGeometry,
                         estimate_brick_pose, simulate_camera, update_window)
from .trajectory import BoundaryConditions, MinJerkTrajectory, plan_min_jerk, sample

ZERO3 = np.zeros(3)
ARRIVE_SPEED = 0.1  # m/s
ENGAGE_DWELL = 0.5  # s
RELEASE_DWELL = 0.5  # s


class AgentInvariantError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# vehicle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PidParams:
    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    v_max: float = 1.0
    i_clamp: float = 0.1
    tau: float = 0.15

    @classmethod
    def make(cls, kp=1.2, ki=0.05, kd=0.3, v_max=1.0, i_clamp=0.1, tau=0.15) -> "PidParams":
        def axes(g):
            a = np.broadcast_to(np.asarray(g, dtype=float), (3,)).copy()
            if np.any(a < 0):
                raise ValueError("PID gains must be non-negative")
            return a
        if v_max <= 0 or tau <= 0:
            raise ValueError("v_max and tau must be positive")
        return cls(axes(kp), axes(ki), axes(kd), float(v_max), float(i_clamp), float(tau))

    @classmethod
    def from_params(cls, p: MissionParams) -> "PidParams":
        return cls.make(p.kp, p.ki, p.kd, p.v_max, p.i_clamp, p.tau)


@dataclass(eq=False)
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    gear_retracted: bool = False
    magnet_on: bool = False
    ball_joint_locked: bool = True
    valve_open: bool = False
    carried_brick: int | None = None
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "VehicleState":
        return replace(self, position=self.position.copy(), velocity=self.velocity.copy(),
                       integral=self.integral.copy())


def vehicle_step(state: VehicleState, target, pid: PidParams, dt: float,
                 target_velocity=None) -> VehicleState:
    """Advance one step toward a position setpoint (or trajectory sample).

    ``target_velocity`` is the sample's velocity and acts as feedforward; omit
    it for a fixed setpoint.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = state.copy()
    tv = ZERO3 if target_velocity is None else np.asarray(target_velocity, dtype=float)
    pid_velocity_step(out.position, out.velocity, out.integral, np.asarray(target, dtype=float),
                      tv, pid.kp, pid.ki, pid.kd, pid.v_max, pid.tau, pid.i_clamp, dt)
    return out


# ---------------------------------------------------------------------------
# world and step context
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BrickBody:
    """Ground-truth pose of one brick (``center`` is the body center)."""

    spec: object
    center: np.ndarray
    yaw: float
    status: str  # "pickup" | "carried" | "placed"
    pickup_center: np.ndarray | None = None
    pickup_yaw: float = 0.0

    @property
    def top(self) -> np.ndarray:
        t = self.center.copy()
        t[2] += self.spec.dims[2] / 2
        return t


@dataclass
class StepContext:
    t: float
    dt: float
    rng: np.random.Generator
    perceive: bool
    bricks: dict
    emit: Callable[..., None]
    on_trajectory: Callable[[int, MinJerkTrajectory, float], None] = lambda *a: None
    on_perception: Callable[[dict], None] = lambda row: None


class _Agent:
    kind = ""
    STATES: type[enum.Enum]
    EVENTS: type[enum.Enum]
    TABLE: dict
    TASK_PHASE: frozenset

    def __init__(self, agent_id: int, home, params: MissionParams):
        self.id = agent_id
        self.home = np.asarray(home, dtype=float).copy()
        self.params = params
        self.pid = PidParams.from_params(params)
        self.vehicle = VehicleState(self.home.copy())
        self.state = self.STATES["IDLE"]
        self.task: Task | None = None
        self.task_started = False
        self.target = self.home.copy()
        self.target_vel = ZERO3
        self.t_enter = 0.0
        self.traj: MinJerkTrajectory | None = None
        self.last_displacement = 0.0

    # -- helpers -----------------------------------------------------------

    def assign(self, task: Task) -> None:
        if self.task is not None:
            raise AgentInvariantError(f"agent {self.id} already holds task {self.task.id}")
        self.task = task
        self.task_started = False

    @property
    def position(self) -> np.ndarray:
        return self.vehicle.position

    @property
    def airborne(self) -> bool:
        return self.state is not self.STATES["IDLE"]

    @property
    def in_task_phase(self) -> bool:
        return self.task is not None and self.state in self.TASK_PHASE

    def _arrived(self, tol: float | None = None) -> bool:
        tol = self.params.eps_align if tol is None else tol
        e = self.target - self.vehicle.position
        v = self.vehicle.velocity
        return (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] < tol * tol
                and v[0] * v[0] + v[1] * v[1] + v[2] * v[2] < ARRIVE_SPEED ** 2)

    def _cruise(self, xy) -> None:
        self.target = np.array([xy[0], xy[1], self.params.h_cr])
        self.target_vel = ZERO3

    def _hold_here(self, z: float | None = None) -> None:
        p = self.vehicle.position
        self.target = np.array([p[0], p[1], p[2] if z is None else z])
        self.target_vel = ZERO3

    def _start_trajectory(self, ctx: StepContext, rf, t_f: float) -> None:
        b = BoundaryConditions.make(self.vehicle.position.copy(), rf, t_f,
                                    v0=self.vehicle.velocity.copy())
        self.traj = plan_min_jerk(b)
        ctx.on_trajectory(self.id, self.traj, ctx.t)

    def _follow_trajectory(self, ctx: StepContext) -> None:
        pos, vel, _ = sample(self.traj, ctx.t - self.t_enter, clamp=True)
        self.target, self.target_vel = pos, vel

    def _fly(self, dt: float) -> None:
        before = self.vehicle.position.copy()
        v = self.vehicle
        pid_velocity_step(v.position, v.velocity, v.integral, self.target, self.target_vel,
                          self.pid.kp, self.pid.ki, self.pid.kd, self.pid.v_max, self.pid.tau,
                          self.pid.i_clamp, dt)
        self.last_displacement = float(np.linalg.norm(v.position - before))

    def _transition(self, ctx: StepContext, event) -> list:
        nxt = self.TABLE[(self.state, event)][0]
        if nxt is self.state:
            return []
        prev = self.state
        self.state = nxt
        self.t_enter = ctx.t
        self.vehicle.integral[:] = 0.0  # every state brings a fresh setpoint
        ctx.emit(ctx.t, "state", self.task.id if self.task else None, self.id,
                 src=prev.value, dst=nxt.value, event=event.value)
        return self._enter(ctx, prev, event)

    def _finish_task(self, ctx: StepContext, success: bool) -> list:
        tid = self.task.id
        self.task = None
        self.task_started = False
        return [(tid, success)]

    def step(self, ctx: StepContext) -> list:
        """Advance one tick. Returns ``[(task_id, success)]`` for finished tasks."""
        event = self._guard(ctx)
        outcomes = self._transition(ctx, event)
        self._during(ctx)
        if self.state is not self.STATES["IDLE"]:
            self._fly(ctx.dt)
        else:
            self.last_displacement = 0.0
        return outcomes

    def actuator_string(self) -> str:
        v = self.vehicle
        return "".join(f"{k}{int(on)}" for k, on in (
            ("G", v.gear_retracted), ("M", v.magnet_on), ("B", v.ball_joint_locked),
            ("V", v.valve_open)))


def _table(states, events, explicit: dict) -> dict:
    """Complete transition table; pairs not listed keep the current state."""
    table = {}
    for s in states:
        for e in events:
            table[(s, e)] = explicit.get((s, e), (s, "", ""))
    return table


# ---------------------------------------------------------------------------
# brick carrier
# ---------------------------------------------------------------------------


class BrickState(str, enum.Enum):
    IDLE = "Idle"
    TAKEOFF = "Takeoff"
    CRUISE_TO_PICKUP = "CruiseToPickup"
    ESTIMATE_POSE = "EstimatePose"
    ASCEND_FOR_VIEW = "AscendForView"
    ALIGN_ABOVE = "AlignAbove"
    DESCEND_PICKUP = "DescendPickup"
    ENGAGE = "Engage"
    CLIMB_VERIFY = "ClimbVerify"
    CRUISE_TO_DROP = "CruiseToDrop"
    DESCEND_DROP = "DescendDrop"
    RELEASE = "Release"
    ASCEND_CLEAR = "AscendClear"
    RETURN_HOME = "ReturnHome"
    LAND = "Land"


class BrickEvent(str, enum.Enum):
    TICK = "tick"
    ASSIGNED = "assigned"
    ARRIVED = "arrived"
    CONFIDENT = "confident"
    NOT_CONFIDENT = "not_confident"
    VIEW_EXHAUSTED = "view_exhausted"
    TRAJ_DONE = "trajectory_done"
    DWELL_DONE = "dwell_done"
    VERIFY_OK = "verify_ok"
    VERIFY_FAIL = "verify_fail"
    IN_RANGE = "in_range"
    TIMEOUT = "timeout"
    RETRIES_EXHAUSTED = "retries_exhausted"


S, E = BrickState, BrickEvent
BRICK_TABLE = _table(S, E, {
    (S.IDLE, E.ASSIGNED): (S.TAKEOFF, "task assigned", "retract gear; climb to h_cr"),
    (S.TAKEOFF, E.ARRIVED): (S.CRUISE_TO_PICKUP, "at h_cr", "fly to approximate pickup site"),
    (S.CRUISE_TO_PICKUP, E.ARRIVED): (S.ESTIMATE_POSE, "above pickup site", "clear window; hover"),
    (S.ESTIMATE_POSE, E.CONFIDENT): (S.ALIGN_ABOVE, "window full and C >= C_th",
                                     "align above estimate"),
    (S.ESTIMATE_POSE, E.NOT_CONFIDENT): (S.ASCEND_FOR_VIEW,
                                         "C < C_th or no tags, altitude < h_max",
                                         "climb delta_h (capped at h_max)"),
    (S.ESTIMATE_POSE, E.VIEW_EXHAUSTED): (S.RETURN_HOME, "C < C_th at h_max",
                                          "report task failure"),
    (S.ASCEND_FOR_VIEW, E.ARRIVED): (S.ESTIMATE_POSE, "at new altitude", "clear window; hover"),
    (S.ALIGN_ABOVE, E.ARRIVED): (S.DESCEND_PICKUP, "above estimate",
                                 "unlock ball joint; magnet on; min-jerk descent"),
    (S.DESCEND_PICKUP, E.TRAJ_DONE): (S.ENGAGE, "t >= t_f",
                                      "engage iff tip-to-plate offset < r_mag"),
    (S.ENGAGE, E.DWELL_DONE): (S.CLIMB_VERIFY, "dwell elapsed", "lock ball joint; climb to h_cr"),
    (S.CLIMB_VERIFY, E.VERIFY_OK): (S.CRUISE_TO_DROP, "at h_cr, brick attached",
                                    "fly to drop-off at h_cr"),
    (S.CLIMB_VERIFY, E.VERIFY_FAIL): (S.ESTIMATE_POSE, "at h_cr, no brick, retries left",
                                      "magnet off; clear window"),
    (S.CLIMB_VERIFY, E.RETRIES_EXHAUSTED): (S.RETURN_HOME, "no brick, retry cap reached",
                                            "magnet off; report task failure"),
    (S.CRUISE_TO_DROP, E.ARRIVED): (S.DESCEND_DROP, "above drop-off",
                                    "unlock ball joint; min-jerk descent"),
    (S.DESCEND_DROP, E.IN_RANGE): (S.RELEASE, "tip-to-target < r_pl", "magnet off; place brick"),
    (S.DESCEND_DROP, E.TIMEOUT): (S.CRUISE_TO_DROP, "t_to elapsed, retries left",
                                  "lock ball joint; re-hover at h_cr"),
    (S.DESCEND_DROP, E.RETRIES_EXHAUSTED): (S.RETURN_HOME, "t_to elapsed, retry cap reached",
                                            "return brick; report task failure"),
    (S.RELEASE, E.DWELL_DONE): (S.ASCEND_CLEAR, "dwell elapsed", "lock ball joint; climb to h_cr"),
    (S.ASCEND_CLEAR, E.ARRIVED): (S.RETURN_HOME, "at h_cr", "report task complete"),
    (S.RETURN_HOME, E.ASSIGNED): (S.CRUISE_TO_PICKUP, "new task assigned",
                                  "fly to approximate pickup site"),
    (S.RETURN_HOME, E.ARRIVED): (S.LAND, "above home", "descend to home"),
    (S.LAND, E.ASSIGNED): (S.TAKEOFF, "new task assigned", "climb to h_cr"),
    (S.LAND, E.ARRIVED): (S.IDLE, "on ground", "extend gear"),
})
del S, E

UNLOCKED_STATES = frozenset({BrickState.DESCEND_PICKUP, BrickState.ENGAGE,
                             BrickState.DESCEND_DROP, BrickState.RELEASE})
MAGNET_STATES = frozenset({BrickState.DESCEND_PICKUP, BrickState.ENGAGE,
                           BrickState.CLIMB_VERIFY, BrickState.CRUISE_TO_DROP,
                           BrickState.DESCEND_DROP})


class BrickAgent(_Agent):
    kind = "brick"
    STATES = BrickState
    EVENTS = BrickEvent
    TABLE = BRICK_TABLE
    TASK_PHASE = frozenset({BrickState.ESTIMATE_POSE, BrickState.ASCEND_FOR_VIEW,
                            BrickState.ALIGN_ABOVE, BrickState.DESCEND_PICKUP, BrickState.ENGAGE,
                            BrickState.CLIMB_VERIFY, BrickState.DESCEND_DROP,
                            BrickState.RELEASE, BrickState.ASCEND_CLEAR})

    def __init__(self, agent_id: int, home, params: MissionParams,
                 camera: CameraModel | None = None, estimate_bias=None):
        super().__init__(agent_id, home, params)
        self.camera = camera or CameraModel(params.cam_sigma, params.cam_yaw_sigma, params.p_occ,
                                            params.fov_half_angle)
        self.weights = FilterWeights(params.w_prox, params.w_dist, params.w_plane)
        self.window = ConfidenceWindow(params.N_W, params.sigma_tol)
        self.geom: MarkerGeometry | None = None
        self.estimate = None  # (top-center, yaw) used for the pickup
        self.last_pose = None
        self.engage_failures = 0
        self.release_retries = 0
        self.bias = None if estimate_bias is None else np.asarray(estimate_bias, float)
        self.bias_attempts = 1 if estimate_bias is not None else 0
        self._active_bias = None
        self.estimation_errors: list[float] = []
        self.placements: dict[int, float] = {}

    # -- guards ------------------------------------------------------------

    def _guard(self, ctx: StepContext) -> BrickEvent:
        S, E = BrickState, BrickEvent
        p = self.params
        st = self.state
        elapsed = ctx.t - self.t_enter
        if st is S.IDLE:
            return E.ASSIGNED if self.task is not None else E.TICK
        if st in (S.RETURN_HOME, S.LAND):
            if self.task is not None and not self.task_started:
                return E.ASSIGNED
            return E.ARRIVED if self._arrived() else E.TICK
        if st is S.ESTIMATE_POSE:
            return self._estimate(ctx)
        if st is S.DESCEND_PICKUP:
            return E.TRAJ_DONE if elapsed >= self.traj.t_f - 1e-9 else E.TICK
        if st is S.ENGAGE:
            return E.DWELL_DONE if elapsed >= ENGAGE_DWELL - 1e-9 else E.TICK
        if st is S.RELEASE:
            return E.DWELL_DONE if elapsed >= RELEASE_DWELL - 1e-9 else E.TICK
        if st is S.CLIMB_VERIFY:
            if not self._arrived():
                return E.TICK
            if self.vehicle.carried_brick is not None:
                return E.VERIFY_OK
            return E.RETRIES_EXHAUSTED if self.engage_failures > p.max_fsm_retries else E.VERIFY_FAIL
        if st is S.DESCEND_DROP:
            target_top = self._drop_top()
            tip = self.vehicle.position.copy()
            tip[2] -= p.l_rod
            if np.linalg.norm(tip - target_top) < p.r_pl:
                return E.IN_RANGE
            if elapsed >= p.t_to - 1e-9:
                return E.RETRIES_EXHAUSTED if self.release_retries >= p.max_fsm_retries else E.TIMEOUT
            return E.TICK
        return E.ARRIVED if self._arrived() else E.TICK

    def _estimate(self, ctx: StepContext) -> BrickEvent:
        E = BrickEvent
        p = self.params
        if ctx.perceive:
            body = ctx.bricks[self.task.brick.id]
            t1, t2 = simulate_camera(self.vehicle.position, body.top, body.yaw,
                                     self.task.brick.marker_ids, self.geom, ctx.rng, self.camera)
            raw = None
            if t1.valid and t2.valid:
                raw = 0.5 * (t1.position + t2.position)
            est = estimate_brick_pose(t1, t2, self.geom, self.weights)
            if est is not None:
                c, theta, source, fallback = est
                if raw is None:
                    raw = c
                pose = update_window(self.window, (c, theta), source)
            else:
                fallback = False
                pose = update_window(self.window, None)
            self.last_pose = pose
            fc = pose.center if pose.center is not None else np.full(3, np.nan)
            rc = raw if raw is not None else np.full(3, np.nan)
            ctx.on_perception({
                "t": ctx.t, "agent_id": self.id, "tag1_valid": int(t1.valid),
                "tag2_valid": int(t2.valid), "raw_cx": rc[0], "raw_cy": rc[1], "raw_cz": rc[2],
                "filtered_cx": fc[0], "filtered_cy": fc[1], "filtered_cz": fc[2],
                "theta": pose.yaw if pose.yaw is not None else math.nan,
                "sigma_max": pose.sigma_max, "C": pose.confidence, "fallback_flag": int(fallback)})
        timed_out = ctx.t - self.t_enter >= p.t_est - 1e-9
        if not (self.window.full or timed_out):
            return E.TICK
        pose = self.last_pose
        if self.window.full and pose is not None and pose.confidence >= p.C_th:
            return E.CONFIDENT
        if self.vehicle.position[2] >= p.h_max - 1e-3:
            return E.VIEW_EXHAUSTED
        return E.NOT_CONFIDENT

    # -- entry actions -----------------------------------------------------

    def _drop_top(self) -> np.ndarray:
        b = self.task.brick
        top = b.target_center.copy()
        top[2] = b.top_z
        return top

    def _enter(self, ctx: StepContext, prev, event) -> list:
        S = BrickState
        p = self.params
        v = self.vehicle
        st = self.state
        tid = self.task.id if self.task else None
        if st is S.TAKEOFF:
            self.task_started = True
            v.gear_retracted = True
            v.ball_joint_locked = True
            self._hold_here(p.h_cr)
        elif st is S.CRUISE_TO_PICKUP:
            self.task_started = True
            self._begin_task()
            self._cruise(self.task.brick.pickup_approx)
        elif st is S.ESTIMATE_POSE:
            self.window.clear()
            self.last_pose = None
            if self.bias_attempts > 0:
                self.bias_attempts -= 1
                self._active_bias = self.bias
            else:
                self._active_bias = None
            self.target_vel = ZERO3
        elif st is S.ASCEND_FOR_VIEW:
            z = min(v.position[2] + p.delta_h, p.h_max)
            self.target = np.array([self.target[0], self.target[1], z])
            ctx.emit(ctx.t, "ascend_for_view", tid, self.id, z=z)
        elif st is S.ALIGN_ABOVE:
            c, yaw = self.last_pose.center.copy(), self.last_pose.yaw
            if self._active_bias is not None:
                c[:2] += self._active_bias[:2]
            self.estimate = (c, yaw)
            truth = ctx.bricks[self.task.brick.id].top
            err = float(np.hypot(*(c[:2] - truth[:2])))
            self.estimation_errors.append(err)
            ctx.emit(ctx.t, "estimate", tid, self.id, C=self.last_pose.confidence, error=err,
                     biased=self._active_bias is not None)
            v.yaw = yaw
            self.target = np.array([c[0], c[1], self.target[2]])
            self.target_vel = ZERO3
        elif st is S.DESCEND_PICKUP:
            v.ball_joint_locked = False
            v.magnet_on = True
            c = self.estimate[0]
            self._start_trajectory(ctx, (c[0], c[1], c[2] + p.l_rod), p.t_f)
        elif st is S.ENGAGE:
            body = ctx.bricks[self.task.brick.id]
            tip = v.position - np.array([0.0, 0.0, p.l_rod])
            offset = float(np.hypot(*(tip[:2] - body.top[:2])))
            ok = offset < p.r_mag and body.status == "pickup"
            if ok:
                v.carried_brick = body.spec.id
                body.status = "carried"
                self._carry(body)
            else:
                self.engage_failures += 1
            ctx.emit(ctx.t, "engage", tid, self.id, ok=ok, offset=offset)
            self._hold_here()
        elif st is S.CLIMB_VERIFY:
            v.ball_joint_locked = True
            self._hold_here(p.h_cr)
        elif st is S.CRUISE_TO_DROP:
            v.ball_joint_locked = True
            if event is BrickEvent.TIMEOUT:
                self.release_retries += 1
                ctx.emit(ctx.t, "release_timeout", tid, self.id, retry=self.release_retries)
            self._cruise(self.task.brick.target_center)
        elif st is S.DESCEND_DROP:
            v.ball_joint_locked = False
            top = self._drop_top()
            self._start_trajectory(ctx, (top[0], top[1], top[2] + p.l_rod), p.t_f)
        elif st is S.RELEASE:
            body = ctx.bricks[v.carried_brick]
            v.magnet_on = False
            v.carried_brick = None
            spec = body.spec
            body.center = np.array([v.position[0], v.position[1], spec.target_center[2]])
            body.yaw = spec.target_yaw
            body.status = "placed"
            err = float(np.hypot(*(body.center[:2] - spec.target_center[:2])))
            self.placements[spec.id] = err
            ctx.emit(ctx.t, "release", tid, self.id, placement_error=err)
            self._hold_here()
        elif st is S.ASCEND_CLEAR:
            v.ball_joint_locked = True
            self._hold_here(p.h_cr)
        elif st is S.RETURN_HOME:
            self._cruise(self.home)
            if prev is S.ASCEND_CLEAR:
                return self._finish_task(ctx, True)
            if prev in (S.ESTIMATE_POSE, S.CLIMB_VERIFY, S.DESCEND_DROP):
                if v.carried_brick is not None:
                    body = ctx.bricks[v.carried_brick]
                    body.center = body.pickup_center.copy()
                    body.yaw = body.pickup_yaw
                    body.status = "pickup"
                    v.carried_brick = None
                    ctx.emit(ctx.t, "brick_returned", tid, self.id)
                v.magnet_on = False
                v.ball_joint_locked = True
                return self._finish_task(ctx, False)
        elif st is S.LAND:
            self.target = self.home.copy()
            self.target_vel = ZERO3
        elif st is S.IDLE:
            v.gear_retracted = False
            v.velocity[:] = 0.0
        if st is S.ESTIMATE_POSE and prev is S.CLIMB_VERIFY:
            v.magnet_on = False
        return []

    def _begin_task(self) -> None:
        b = self.task.brick
        self.geom = MarkerGeometry(self.params.d, *(b.marker_offsets or (None, None)),
                                   b.marker_delta)
        self.engage_failures = 0
        self.release_retries = 0

    def _carry(self, body: BrickBody) -> None:
        tip = self.vehicle.position.copy()
        tip[2] -= self.params.l_rod
        body.center = tip - np.array([0.0, 0.0, body.spec.dims[2] / 2])

    # -- per-tick ----------------------------------------------------------

    def _during(self, ctx: StepContext) -> None:
        S = BrickState
        if self.state in (S.DESCEND_PICKUP, S.DESCEND_DROP):
            self._follow_trajectory(ctx)

    def step(self, ctx: StepContext) -> list:
        out = super().step(ctx)
        if self.vehicle.carried_brick is not None:
            self._carry(ctx.bricks[self.vehicle.carried_brick])
        return out

    def check_invariants(self) -> None:
        v = self.vehicle
        st = self.state
        if v.valve_open:
            raise AgentInvariantError("brick agent has no valve")
        if v.carried_brick is not None and not v.magnet_on:
            raise AgentInvariantError("carrying a brick with the magnet off")
        if v.magnet_on and st not in MAGNET_STATES:
            raise AgentInvariantError(f"magnet on in {st.value}")
        if v.ball_joint_locked == (st in UNLOCKED_STATES):
            raise AgentInvariantError(f"ball joint lock wrong in {st.value}")
        if st in (BrickState.DESCEND_PICKUP, BrickState.DESCEND_DROP) and self.traj is None:
            raise AgentInvariantError(f"{st.value} without an active trajectory")


# ---------------------------------------------------------------------------
# adhesion
# ---------------------------------------------------------------------------


class AdhesionState(str, enum.Enum):
    IDLE = "Idle"
    TAKEOFF = "Takeoff"
    CRUISE_TO_START = "CruiseToStart"
    HOVER_STABILIZE = "HoverStabilize"
    DESCEND_OFFSET = "DescendOffset"
    SPRAY = "Spray"
    ASCEND_CLEAR = "AscendClear"
    RETURN_HOME = "ReturnHome"
    LAND = "Land"


class AdhesionEvent(str, enum.Enum):
    TICK = "tick"
    ASSIGNED = "assigned"
    ARRIVED = "arrived"
    STABLE = "stable"
    STAB_TIMEOUT = "stabilize_timeout"
    TRAJ_DONE = "trajectory_done"
    SPRAY_DONE = "spray_done"


S, E = AdhesionState, AdhesionEvent
ADHESION_TABLE = _table(S, E, {
    (S.IDLE, E.ASSIGNED): (S.TAKEOFF, "task assigned", "retract gear; climb to h_cr"),
    (S.TAKEOFF, E.ARRIVED): (S.CRUISE_TO_START, "at h_cr", "fly above adhesion start"),
    (S.CRUISE_TO_START, E.ARRIVED): (S.HOVER_STABILIZE, "above start", "hover"),
    (S.HOVER_STABILIZE, E.STABLE): (S.DESCEND_OFFSET, "error < eps_stab for t_stab",
                                    "min-jerk descent to spray height"),
    (S.HOVER_STABILIZE, E.STAB_TIMEOUT): (S.CRUISE_TO_START, "t_stab_timeout elapsed",
                                          "re-approach at h_cr"),
    (S.DESCEND_OFFSET, E.TRAJ_DONE): (S.SPRAY, "descent finished", "open valve; traverse"),
    (S.SPRAY, E.SPRAY_DONE): (S.ASCEND_CLEAR, "progress >= l_A", "close valve; climb to h_cr"),
    (S.ASCEND_CLEAR, E.ARRIVED): (S.RETURN_HOME, "at h_cr", "report task complete"),
    (S.RETURN_HOME, E.ASSIGNED): (S.CRUISE_TO_START, "new task assigned",
                                  "fly above adhesion start"),
    (S.RETURN_HOME, E.ARRIVED): (S.LAND, "above home", "descend to home"),
    (S.LAND, E.ASSIGNED): (S.TAKEOFF, "new task assigned", "climb to h_cr"),
    (S.LAND, E.ARRIVED): (S.IDLE, "on ground", "extend gear"),
})
del S, E


class AdhesionAgent(_Agent):
    kind = "adhesion"
    STATES = AdhesionState
    EVENTS = AdhesionEvent
    TABLE = ADHESION_TABLE
    TASK_PHASE = frozenset({AdhesionState.HOVER_STABILIZE, AdhesionState.DESCEND_OFFSET,
                            AdhesionState.SPRAY, AdhesionState.ASCEND_CLEAR})

    def __init__(self, agent_id: int, home, params: MissionParams):
        super().__init__(agent_id, home, params)
        self.progress = 0.0
        self.stable_since: float | None = None
        self.spray_start = None

    def _guard(self, ctx: StepContext) -> AdhesionEvent:
        S, E = AdhesionState, AdhesionEvent
        p = self.params
        st = self.state
        if st is S.IDLE:
            return E.ASSIGNED if self.task is not None else E.TICK
        if st in (S.RETURN_HOME, S.LAND):
            if self.task is not None and not self.task_started:
                return E.ASSIGNED
            return E.ARRIVED if self._arrived() else E.TICK
        if st is S.HOVER_STABILIZE:
            err = np.linalg.norm(self.target - self.vehicle.position)
            if err < p.eps_stab:
                if self.stable_since is None:
                    self.stable_since = ctx.t
                if ctx.t - self.stable_since >= p.t_stab - 1e-9:
                    return E.STABLE
            else:
                self.stable_since = None
            if ctx.t - self.t_enter >= p.t_stab_timeout - 1e-9:
                return E.STAB_TIMEOUT
            return E.TICK
        if st is S.DESCEND_OFFSET:
            return E.TRAJ_DONE if ctx.t - self.t_enter >= self.traj.t_f - 1e-9 else E.TICK
        if st is S.SPRAY:
            return E.SPRAY_DONE if self.progress >= self.task.adhesion.length - 1e-9 else E.TICK
        return E.ARRIVED if self._arrived() else E.TICK

    def _enter(self, ctx: StepContext, prev, event) -> list:
        S = AdhesionState
        p = self.params
        v = self.vehicle
        st = self.state
        tid = self.task.id if self.task else None
        if st is S.TAKEOFF:
            self.task_started = True
            v.gear_retracted = True
            self._hold_here(p.h_cr)
        elif st is S.CRUISE_TO_START:
            self.task_started = True
            self._cruise(self.task.adhesion.start)
        elif st is S.HOVER_STABILIZE:
            self.stable_since = None
            self.target_vel = ZERO3
        elif st is S.DESCEND_OFFSET:
            s = self.task.adhesion.start
            self._start_trajectory(ctx, (s[0], s[1], s[2] + p.spray_offset), p.t_desc_adhesion)
        elif st is S.SPRAY:
            v.valve_open = True
            self.progress = 0.0
            self.spray_start = self.target.copy()
            ctx.emit(ctx.t, "valve_open", tid, self.id)
        elif st is S.ASCEND_CLEAR:
            v.valve_open = False
            ctx.emit(ctx.t, "valve_closed", tid, self.id, sprayed=self.progress)
            self._hold_here(p.h_cr)
        elif st is S.RETURN_HOME:
            self._cruise(self.home)
            if prev is S.ASCEND_CLEAR:
                return self._finish_task(ctx, True)
        elif st is S.LAND:
            self.target = self.home.copy()
            self.target_vel = ZERO3
        elif st is S.IDLE:
            v.gear_retracted = False
            v.velocity[:] = 0.0
        return []

    def _during(self, ctx: StepContext) -> None:
        S = AdhesionState
        if self.state is S.DESCEND_OFFSET:
            self._follow_trajectory(ctx)
        elif self.state is S.SPRAY:
            adh = self.task.adhesion
            self.progress = min(self.progress + self.params.v_spray * ctx.dt, adh.length)
            self.target = self.spray_start.copy()
            self.target[:2] += adh.direction * self.progress
            if self.progress < adh.length:
                self.target_vel = np.array([*(adh.direction * self.params.v_spray), 0.0])
            else:
                self.target_vel = ZERO3

    def check_invariants(self) -> None:
        v = self.vehicle
        if v.valve_open != (self.state is AdhesionState.SPRAY):
            raise AgentInvariantError(f"valve {'open' if v.valve_open else 'closed'} in "
                                      f"{self.state.value}")
        if v.magnet_on or v.carried_brick is not None:
            raise AgentInvariantError("adhesion agent has no magnet")


def make_agent(kind: str, agent_id: int, home, params: MissionParams, **kw) -> _Agent:
    if kind == "brick":
        return BrickAgent(agent_id, home, params, **kw)
    if kind == "adhesion":
        return AdhesionAgent(agent_id, home, params)
    raise ValueError(f"unknown agent kind {kind!r}")


def guard_table_markdown() -> str:
    """The transition tables rendered as markdown (source of docs/fsm.md)."""
    lines = ["# Agent state machines", "",
             "Generated from `aerialmason.agents`. Any (state, event) pair not listed",
             "keeps the current state. Events are evaluated once per tick by the",
             "state's guard; the first matching event wins.", ""]
    for title, table in (("Brick carrier", BRICK_TABLE), ("Adhesion", ADHESION_TABLE)):
        lines += [f"## {title}", "", "| state | event | next | guard | action |",
                  "|---|---|---|---|---|"]
        for (s, e), (nxt, guard, action) in table.items():
            if guard:
                lines.append(f"| {s.value} | {e.value} | {nxt.value} | {guard} | {action} |")
        lines.append("")
    return "\n".join(lines)
