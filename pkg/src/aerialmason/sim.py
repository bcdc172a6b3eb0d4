"""Deterministic fixed-step mission engine, clearance monitoring, traces and metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .agents import AgentInvariantError, BrickBody, StepContext, make_agent
from .blueprint import BRICK, Blueprint, MissionParams, to_dot
from .planner import Planner, PlannerError, TaskStatus
from .trajectory import MinJerkTrajectory, dump_csv

log = logging.getLogger(__name__)

AGENT_COLUMNS = ["t", "agent_id", "fsm_state", "x", "y", "z", "actuators", "task_id"]
PERCEPTION_COLUMNS = ["t", "agent_id", "tag1_valid", "tag2_valid", "raw_cx", "raw_cy", "raw_cz",
                      "filtered_cx", "filtered_cy", "filtered_cz", "theta", "sigma_max", "C",
                      "fallback_flag"]


class SimulationError(RuntimeError):
    """A per-tick invariant broke; the run is aborted."""


@dataclass
class SimConfig:
    """Engine settings. ``dt`` and ``seed`` fall back to the blueprint params when ``None``."""

    dt: float | None = None
    seed: int | None = None
    max_sim_time: float = 3600.0
    perception_every: int = 5
    max_task_retries: int | None = 2
    overrides: dict = field(default_factory=dict)
    disable_conflict_pruning: bool = False
    engage_bias: tuple | None = None
    record_traces: bool = True

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.max_sim_time > 0:
            raise ValueError("max_sim_time must be positive")
        if self.perception_every < 1:
            raise ValueError("perception_every must be at least 1")

    def with_param(self, key: str, value: Any) -> "SimConfig":
        """Apply one ``KEY=VALUE`` override; ``sim.`` / ``params.`` prefixes are optional."""
        scope, _, name = key.rpartition(".")
        sim_fields = {f.name for f in fields(self)} - {"overrides"}
        if scope not in ("", "sim", "params"):
            raise KeyError(key)
        if scope == "sim" or (scope == "" and name in sim_fields):
            if name not in sim_fields:
                raise KeyError(key)
            return replace(self, **{name: _coerce_sim(name, value)})
        if name in MissionParams.field_names():
            return replace(self, overrides={**self.overrides,
                                            name: MissionParams.coerce(name, _number(value))})
        raise KeyError(key)

    def resolve(self, params: MissionParams) -> MissionParams:
        p = replace(params, **self.overrides) if self.overrides else params
        if self.dt is not None:
            p = replace(p, dt=float(self.dt))
        if self.seed is not None:
            p = replace(p, seed=int(self.seed))
        return p


def _number(value: Any) -> float:
    if isinstance(value, str):
        return float(value)
    return value


def _coerce_sim(name: str, value: Any) -> Any:
    if name in ("disable_conflict_pruning", "record_traces"):
        if isinstance(value, str):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(f"{name} expects a boolean")
        return bool(value)
    if name == "engage_bias":
        if isinstance(value, str):
            value = [float(v) for v in value.split(",")]
        return tuple(float(v) for v in value)
    if name in ("perception_every", "seed"):
        return int(float(value))
    if name == "max_task_retries":
        if isinstance(value, str) and value.lower() in ("none", "inf"):
            return None
        return int(float(value))
    return float(value)


@dataclass
class MissionMetrics:
    success: bool
    failure_reason: str | None
    makespan: float
    sim_time: float
    task_durations: dict = field(default_factory=dict)
    task_status: dict = field(default_factory=dict)
    min_separation: float = math.inf
    min_task_separation: float = math.inf
    clearance_violation: bool = False
    placement_errors: dict = field(default_factory=dict)
    estimation_error_mean: float | None = None
    estimation_error_max: float | None = None
    estimation_count: int = 0
    task_retries: dict = field(default_factory=dict)
    engage_failures: int = 0
    release_timeouts: int = 0
    view_ascents: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("min_separation", "min_task_separation"):
            if d[k] == math.inf:
                d[k] = None
        return json.dumps(_round(d), sort_keys=True, indent=2) + "\n"


@dataclass
class MissionResult:
    metrics: MissionMetrics
    events: list
    files: dict = field(default_factory=dict)

    def events_jsonl(self) -> str:
        return events_to_jsonl(self.events)


def _round(obj):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        r = round(obj, 6)
        return 0.0 if r == 0 else r
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _round(obj.item())
    return obj


def events_to_jsonl(events: Iterable[dict]) -> str:
    return "".join(json.dumps(_round(e), sort_keys=True) + "\n" for e in events)


# ---------------------------------------------------------------------------
# clearance
# ---------------------------------------------------------------------------


class ClearanceMonitor:
    """Tracks pairwise UAV separation; only task-phase pairs can violate."""

    def __init__(self, r_c: float):
        self.r_c = r_c
        self.min_separation = math.inf
        self.min_task_separation = math.inf
        self.violation = False
        self._open: set = set()

    def update(self, t: float, agents: list, emit=None) -> None:
        """``agents`` holds ``(agent_id, position, airborne, in_task_phase)`` tuples."""
        flying = [a for a in agents if a[2]]
        if len(flying) < 2:
            self._open.clear()
            return
        for i, (ia, pa, _, ta) in enumerate(flying):
            for ib, pb, _, tb in flying[i + 1:]:
                dist = float(math.dist(pa, pb))
                self.min_separation = min(self.min_separation, dist)
                key = (ia, ib)
                if ta and tb:
                    self.min_task_separation = min(self.min_task_separation, dist)
                    if dist < self.r_c:
                        self.violation = True
                        if key not in self._open and emit is not None:
                            emit(t, "clearance_violation", None, None, agents=[ia, ib],
                                 distance=dist)
                        self._open.add(key)
                        continue
                self._open.discard(key)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


class _Traces:
    """Streams CSV traces into ``out_dir`` (or discards them)."""

    def __init__(self, out_dir: Path | None, dt: float, enabled: bool):
        self.out_dir = out_dir
        self.enabled = enabled and out_dir is not None
        self.dt = dt
        self.n_traj = 0
        self.files: dict[str, Path] = {}
        if self.enabled:
            out_dir.mkdir(parents=True, exist_ok=True)
            self._agents_fh = open(out_dir / "agents.csv", "w", newline="")
            self._perc_fh = open(out_dir / "perception.csv", "w", newline="")
            self.agents = csv.writer(self._agents_fh, lineterminator="\n")
            self.perception = csv.writer(self._perc_fh, lineterminator="\n")
            self.agents.writerow(AGENT_COLUMNS)
            self.perception.writerow(PERCEPTION_COLUMNS)
            self.files["agents"] = out_dir / "agents.csv"
            self.files["perception"] = out_dir / "perception.csv"

    def agent_row(self, t: float, agent) -> None:
        if not self.enabled:
            return
        p = agent.position
        self.agents.writerow([f"{t:.6f}", agent.id, agent.state.value, f"{p[0]:.6f}",
                              f"{p[1]:.6f}", f"{p[2]:.6f}", agent.actuator_string(),
                              agent.task.id if agent.task else ""])

    def perception_row(self, row: dict) -> None:
        if not self.enabled:
            return
        out = []
        for c in PERCEPTION_COLUMNS:
            v = row[c]
            out.append(f"{v:.6f}" if isinstance(v, float) else v)
        self.perception.writerow(out)

    def trajectory(self, agent_id: int, traj: MinJerkTrajectory, t0: float) -> None:
        if not self.enabled:
            return
        path = self.out_dir / f"trajectory_{self.n_traj:03d}_agent{agent_id}.csv"
        path.write_text(dump_csv(traj, self.dt, t0))
        self.files[path.stem] = path
        self.n_traj += 1

    def close(self) -> None:
        if self.enabled:
            self._agents_fh.close()
            self._perc_fh.close()


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------


def _init_world(bp: Blueprint, params: MissionParams, rng: np.random.Generator) -> dict:
    bricks = {}
    for b in sorted(bp.plan.bricks, key=lambda b: b.id):
        if b.pre_placed:
            bricks[b.id] = BrickBody(b, b.target_center.copy(), b.target_yaw, "placed")
            continue
        noise = rng.standard_normal(3)
        c = b.pickup_approx.copy()
        c[0] += params.pickup_sigma * noise[0]
        c[1] += params.pickup_sigma * noise[1]
        yaw = b.target_yaw + 0.05 * noise[2]
        bricks[b.id] = BrickBody(b, c, yaw, "pickup", c.copy(), yaw)
    return bricks


def run_mission(blueprint: Blueprint | str | Path | dict, config: SimConfig | None = None,
                out_dir: str | Path | None = None) -> MissionResult:
    """Simulate one mission until every task is terminal or ``max_sim_time`` is hit.

    Raises :class:`SimulationError` if an actuator, safety or kinematic
    invariant breaks during the run.
    """
    config = config or SimConfig()
    bp = blueprint if isinstance(blueprint, Blueprint) else Blueprint.load(blueprint)
    params = config.resolve(bp.params)
    problems = list(params.problems())
    if problems:
        raise ValueError(problems[0].message)
    if config.overrides and "r_c" in config.overrides:
        bp = Blueprint.from_parts(bp.plan, bp.setup, params)
    dt = params.dt
    rng = np.random.default_rng(params.seed)
    out = Path(out_dir) if out_dir is not None else None

    events: list[dict] = []

    def emit(t, kind, task, agent, **detail):
        ev = {"t": t, "kind": kind, "task": task, "agent": agent}
        ev.update(detail)
        events.append(ev)

    planner = Planner(bp.dep, bp.conflict, [(a.id, a.kind) for a in bp.setup.agents],
                      max_retries=config.max_task_retries,
                      enforce_conflicts=not config.disable_conflict_pruning,
                      log=lambda t, kind, task, agent: emit(t, kind, task, agent))
    agents = []
    for spec in sorted(bp.setup.agents, key=lambda a: a.id):
        kw = {}
        if spec.kind == BRICK and config.engage_bias is not None:
            kw["estimate_bias"] = config.engage_bias
        agents.append(make_agent(spec.kind, spec.id, spec.home, params, **kw))
    by_id = {a.id: a for a in agents}
    bricks = _init_world(bp, params, rng)
    traces = _Traces(out, dt, config.record_traces)
    monitor = ClearanceMonitor(params.r_c)
    v_limit = params.v_max * dt * (1 + 1e-9) + 1e-12

    ctx = StepContext(0.0, dt, rng, False, bricks, emit, traces.trajectory, traces.perception_row)
    emit(0.0, "mission_start", None, None, seed=params.seed, dt=dt,
         tasks=len(bp.tasks), agents=len(agents))

    tick = 0
    t = 0.0
    failure = None
    try:
        while not planner.mission_over:
            if t > config.max_sim_time + 1e-9:
                failure = "timeout"
                break
            idle = [a.id for a in agents if a.task is None]
            for asg in planner.assign_step(t, idle):
                by_id[asg.agent_id].assign(bp.dep.tasks[asg.task_id])
                planner.start(asg.task_id, t)
            ctx.t = t
            ctx.perceive = tick % config.perception_every == 0
            for agent in agents:
                for task_id, ok in agent.step(ctx):
                    planner.notify_complete(task_id, ok, t)
            _check_tick(planner, agents, v_limit, config)
            monitor.update(t, [(a.id, a.position, a.airborne, a.in_task_phase) for a in agents],
                           emit)
            for agent in agents:
                traces.agent_row(t, agent)
            tick += 1
            t = tick * dt
    except (AgentInvariantError, PlannerError) as exc:
        traces.close()
        raise SimulationError(f"t={t:.3f}: {exc}") from exc
    traces.close()

    if failure is None and planner.mission_failed:
        failure = "task_failed"
    end_t = events[-1]["t"] if planner.mission_over else t
    emit(end_t, "mission_end", None, None, success=failure is None, reason=failure,
         min_separation=monitor.min_separation, min_task_separation=monitor.min_task_separation,
         clearance_violation=monitor.violation, sim_time=end_t,
         status={k: v.value for k, v in sorted(planner.status.items())})
    metrics = metrics_from_events(events)

    files = dict(traces.files)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "events.jsonl").write_text(events_to_jsonl(events))
        (out / "metrics.json").write_text(metrics.to_json())
        (out / "graphs.dot").write_text(to_dot(bp.dep, bp.conflict))
        files.update(events=out / "events.jsonl", metrics=out / "metrics.json",
                     graphs=out / "graphs.dot")
    return MissionResult(metrics, events, files)


def _check_tick(planner: Planner, agents: list, v_limit: float, config: SimConfig) -> None:
    if not config.disable_conflict_pruning:
        planner.check_safety()
    for a in agents:
        a.check_invariants()
        if a.last_displacement > v_limit:
            raise AgentInvariantError(
                f"agent {a.id} moved {a.last_displacement:.6f} m in one tick")
        if a.task is not None and planner.status[a.task.id] is not TaskStatus.IN_PROGRESS:
            raise AgentInvariantError(f"agent {a.id} holds task {a.task.id} that is "
                                      f"{planner.status[a.task.id].value}")


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def metrics_from_events(events: Iterable[dict]) -> MissionMetrics:
    """Rebuild mission metrics from an event log (used live and for replay)."""
    started: dict[str, float] = {}
    durations: dict[str, float] = {}
    retries: dict[str, int] = {}
    placement: dict[str, float] = {}
    est: list[float] = []
    makespan = 0.0
    engage_fail = release_to = ascents = 0
    end = None
    for e in events:
        kind, task = e["kind"], e.get("task")
        if kind == "started":
            started.setdefault(task, e["t"])
        elif kind == "completed":
            durations[task] = e["t"] - started.get(task, e["t"])
            makespan = max(makespan, e["t"])
        elif kind == "failed":
            retries[task] = retries.get(task, 0) + 1
        elif kind == "release":
            placement[task[1:]] = e["placement_error"]
        elif kind == "estimate":
            est.append(e["error"])
        elif kind == "engage" and not e["ok"]:
            engage_fail += 1
        elif kind == "release_timeout":
            release_to += 1
        elif kind == "ascend_for_view":
            ascents += 1
        elif kind == "mission_end":
            end = e
    if end is None:
        raise ValueError("event log has no mission_end record")

    def sep(v):
        return math.inf if v is None else v

    return MissionMetrics(
        success=bool(end["success"]), failure_reason=end["reason"], makespan=makespan,
        sim_time=end["sim_time"], task_durations=durations, task_status=dict(end["status"]),
        min_separation=sep(end["min_separation"]),
        min_task_separation=sep(end["min_task_separation"]),
        clearance_violation=bool(end["clearance_violation"]), placement_errors=placement,
        estimation_error_mean=float(np.mean(est)) if est else None,
        estimation_error_max=float(np.max(est)) if est else None,
        estimation_count=len(est), task_retries=retries, engage_failures=engage_fail,
        release_timeouts=release_to, view_ascents=ascents)


def read_events(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay(path: str | Path) -> MissionMetrics:
    return metrics_from_events(read_events(path))


def metrics_summary(m: MissionMetrics) -> str:
    buf = io.StringIO()
    buf.write(f"success: {m.success}" + (f" ({m.failure_reason})" if m.failure_reason else "")
              + "\n")
    buf.write(f"makespan: {m.makespan:.2f} s\n")
    for tid in sorted(m.task_status):
        d = m.task_durations.get(tid)
        extra = f" {d:.2f} s" if d is not None else ""
        buf.write(f"  {tid}: {m.task_status[tid]}{extra}\n")
    if math.isfinite(m.min_separation):
        buf.write(f"min separation: {m.min_separation:.3f} m\n")
    if math.isfinite(m.min_task_separation):
        buf.write(f"min task-phase separation: {m.min_task_separation:.3f} m\n")
    buf.write(f"clearance violation: {m.clearance_violation}\n")
    if m.placement_errors:
        worst = max(m.placement_errors.values())
        buf.write(f"placement error max: {worst * 100:.2f} cm\n")
    if m.estimation_error_mean is not None:
        buf.write(f"estimation error mean: {m.estimation_error_mean * 100:.2f} cm "
                  f"({m.estimation_count} estimates)\n")
    return buf.getvalue()
