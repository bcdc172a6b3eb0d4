"""Reactive mission control: task lifecycle, availability and conflict-aware assignment."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .blueprint import ADHESION, BRICK, ConflictGraph, DependencyGraph


class TaskStatus(str, enum.Enum):
    BLOCKED = "blocked"
    AVAILABLE = "available"
    ASSIGNED = "assigned"
    IN_PROGRESS = "in_progress"
    COMPLETE = "complete"
    FAILED_RETRYABLE = "failed_retryable"
    FAILED = "failed"  # retry cap exhausted; terminal


ACTIVE = (TaskStatus.ASSIGNED, TaskStatus.IN_PROGRESS)
TERMINAL = (TaskStatus.COMPLETE, TaskStatus.FAILED)


class PlannerError(RuntimeError):
    """Contract violation by the caller (unknown task, wrong lifecycle state)."""


@dataclass
class AgentHandle:
    agent_id: int
    kind: str
    busy: bool = False
    current_task: str | None = None


@dataclass(frozen=True)
class Assignment:
    task_id: str
    agent_id: int


def available_tasks(dep: DependencyGraph,
                    status: Mapping[str, TaskStatus]) -> tuple[list[str], list[str]]:
    """``(adhesion, brick)`` task ids whose descendants are all complete."""
    adhesion, brick = [], []
    for tid in dep.nodes:
        st = status[tid]
        if st in ACTIVE or st in TERMINAL:
            continue
        if all(status[c] is TaskStatus.COMPLETE for c in dep.descendants(tid)):
            (adhesion if dep.kind(tid) == ADHESION else brick).append(tid)
    return adhesion, brick


def prune_conflicting(candidates: Iterable[str], conflict: ConflictGraph,
                      active: Iterable[str], order: Callable | None = None) -> list[str]:
    """Drop candidates that conflict with an active task or with an earlier survivor."""
    kept: list[str] = []
    blocked = set(active)
    ranked = list(candidates) if order is None else order(candidates)
    for tid in ranked:
        if any(conflict.conflicts(tid, other) for other in blocked):
            continue
        kept.append(tid)
        blocked.add(tid)
    return kept


class Planner:
    """Owns task status. Driven synchronously by the simulation engine.

    ``log`` receives ``(time, event_kind, task_id, agent_id)`` tuples.
    """

    def __init__(self, dep: DependencyGraph, conflict: ConflictGraph,
                 agents: Iterable[tuple[int, str]] = (), max_retries: int | None = None,
                 enforce_conflicts: bool = True,
                 log: Callable[[float, str, str | None, int | None], None] | None = None):
        self.dep = dep
        self.conflict = conflict if enforce_conflicts else ConflictGraph()
        self.enforce_conflicts = enforce_conflicts
        self.max_retries = max_retries
        self.agents = {aid: AgentHandle(aid, kind) for aid, kind in sorted(agents)}
        self.retries = {tid: 0 for tid in dep.tasks}
        self.status: dict[str, TaskStatus] = {}
        self._log = log or (lambda *a: None)
        for tid, task in dep.tasks.items():
            self.status[tid] = TaskStatus.COMPLETE if task.initially_complete else TaskStatus.BLOCKED
        self._refresh()

    # -- queries -----------------------------------------------------------

    def snapshot(self) -> dict[str, TaskStatus]:
        return dict(self.status)

    def active(self) -> list[str]:
        return [t for t, s in self.status.items() if s in ACTIVE]

    @property
    def mission_complete(self) -> bool:
        return all(s is TaskStatus.COMPLETE for s in self.status.values())

    @property
    def mission_over(self) -> bool:
        return all(s in TERMINAL for s in self.status.values())

    @property
    def mission_failed(self) -> bool:
        return any(s is TaskStatus.FAILED for s in self.status.values())

    def idle_agents(self, kind: str | None = None) -> list[int]:
        return [a.agent_id for a in self.agents.values()
                if not a.busy and (kind is None or a.kind == kind)]

    def check_safety(self) -> None:
        """Raise if two active tasks form a conflict pair."""
        act = self.active()
        for i, a in enumerate(act):
            for b in act[i + 1:]:
                if self.conflict.conflicts(a, b):
                    raise PlannerError(f"conflicting tasks {a} and {b} active together")

    # -- lifecycle ---------------------------------------------------------

    def _refresh(self) -> None:
        adh, brk = available_tasks(self.dep, self.status)
        ready = set(adh) | set(brk)
        for tid, st in self.status.items():
            if st in ACTIVE or st in TERMINAL:
                continue
            self.status[tid] = TaskStatus.AVAILABLE if tid in ready else TaskStatus.BLOCKED

    def assign_step(self, t: float = 0.0, idle: Iterable[int] | None = None) -> list[Assignment]:
        """One pass of the assignment loop: brick agents first, then adhesion agents."""
        idle_ids = set(self.idle_agents() if idle is None else idle)
        adh, brk = available_tasks(self.dep, self.status)
        active = set(self.active())
        out = []
        for kind, candidates in ((BRICK, brk), (ADHESION, adh)):
            agents = [aid for aid in self.idle_agents(kind) if aid in idle_ids]
            remaining = list(candidates)
            for aid in agents:
                pick = prune_conflicting(remaining, self.conflict, active)
                if not pick:
                    break
                tid = pick[0]
                remaining.remove(tid)
                active.add(tid)
                self.status[tid] = TaskStatus.ASSIGNED
                handle = self.agents[aid]
                handle.busy, handle.current_task = True, tid
                out.append(Assignment(tid, aid))
                self._log(t, "assigned", tid, aid)
        return out

    def start(self, task_id: str, t: float = 0.0) -> None:
        if self.status.get(task_id) is not TaskStatus.ASSIGNED:
            raise PlannerError(f"task {task_id} is not assigned")
        self.status[task_id] = TaskStatus.IN_PROGRESS
        self._log(t, "started", task_id, self._owner(task_id))

    def _owner(self, task_id: str) -> int | None:
        for a in self.agents.values():
            if a.current_task == task_id:
                return a.agent_id
        return None

    def notify_complete(self, task_id: str, success: bool, t: float = 0.0) -> None:
        if task_id not in self.status:
            raise PlannerError(f"unknown task {task_id}")
        if self.status[task_id] is not TaskStatus.IN_PROGRESS:
            raise PlannerError(f"task {task_id} is {self.status[task_id].value}, not in progress")
        owner = self._owner(task_id)
        if owner is not None:
            h = self.agents[owner]
            h.busy, h.current_task = False, None
        if success:
            self.status[task_id] = TaskStatus.COMPLETE
            self._log(t, "completed", task_id, owner)
        else:
            self.retries[task_id] += 1
            self.status[task_id] = TaskStatus.FAILED_RETRYABLE
            self._log(t, "failed", task_id, owner)
            if self.max_retries is not None and self.retries[task_id] > self.max_retries:
                self.status[task_id] = TaskStatus.FAILED
                self._log(t, "abandoned", task_id, owner)
                for anc in self.dep.order(self.dep.ancestors(task_id)):
                    if self.status[anc] not in TERMINAL:
                        self.status[anc] = TaskStatus.FAILED
                        self._log(t, "abandoned", anc, None)
        self._refresh()
