import json
import math
from dataclasses import replace

import numpy as np
import pytest

from aerialmason import sim as sim_mod
from aerialmason.agents import AgentInvariantError, BrickAgent
from aerialmason.sim import (AGENT_COLUMNS, PERCEPTION_COLUMNS, ClearanceMonitor, SimConfig,
                             SimulationError, metrics_from_events, read_events, replay,
                             run_mission)

TERMINAL = {"complete", "failed"}


def close_stacks_doc(gap=0.8):
    """Two pre-placed bricks ``gap`` apart, each with a pending brick on top."""
    def brick(i, x, z, pre):
        extra = {"pre_placed": True} if pre else {"pickup_approx": [3.0, -1.0 + i, 0.05]}
        return {"id": i, "layer": int(z > 0.1), "target_center": [x, 0, z],
                "dims": [0.4, 0.2, 0.1], "marker_ids": [2 * i, 2 * i + 1], **extra}
    return {"params": {"r_c": 1.5},
            "bricks": [brick(0, 0, 0.05, True), brick(1, gap, 0.05, True),
                       brick(2, 0, 0.15, False), brick(3, gap, 0.15, False)],
            "agents": [{"id": 0, "kind": "brick", "home": [3, -2.5, 0]},
                       {"id": 1, "kind": "adhesion", "home": [-2, -2, 0]}]}


@pytest.fixture(scope="module")
def case_run(tmp_path_factory):
    from aerialmason.scenarios import case_study
    out = tmp_path_factory.mktemp("case")
    return run_mission(case_study(), SimConfig(), out), out


def test_determinism(case_bp, tmp_path):
    a = run_mission(case_bp, SimConfig(seed=7), tmp_path / "a")
    b = run_mission(case_bp, SimConfig(seed=7), tmp_path / "b")
    assert (tmp_path / "a" / "events.jsonl").read_bytes() == \
        (tmp_path / "b" / "events.jsonl").read_bytes()
    assert (tmp_path / "a" / "agents.csv").read_bytes() == \
        (tmp_path / "b" / "agents.csv").read_bytes()
    c = run_mission(case_bp, SimConfig(seed=8))
    assert a.events_jsonl() != c.events_jsonl() and b.metrics == a.metrics


def test_outputs(case_run):
    r, out = case_run
    for name in ("events.jsonl", "metrics.json", "graphs.dot", "agents.csv", "perception.csv"):
        assert (out / name).is_file()
    assert (out / "agents.csv").read_text().splitlines()[0] == ",".join(AGENT_COLUMNS)
    assert (out / "perception.csv").read_text().splitlines()[0] == ",".join(PERCEPTION_COLUMNS)
    trajs = sorted(out.glob("trajectory_*_agent*.csv"))
    assert trajs and trajs[0].name.startswith("trajectory_000_agent")
    assert "digraph" in (out / "graphs.dot").read_text()
    m = json.loads((out / "metrics.json").read_text())
    assert m["success"] is True and m["makespan"] == pytest.approx(r.metrics.makespan, abs=1e-6)


def test_makespan_is_last_completion(case_run):
    r, _ = case_run
    last = max(e["t"] for e in r.events if e["kind"] == "completed")
    assert r.metrics.makespan == last
    assert set(r.metrics.task_status.values()) <= TERMINAL
    assert r.events[-1]["kind"] == "mission_end"
    # all events are time ordered
    ts = [e["t"] for e in r.events]
    assert ts == sorted(ts)


def test_replay_matches_live_metrics(case_run):
    r, out = case_run
    again = replay(out / "events.jsonl")
    assert again.to_json() == (out / "metrics.json").read_text()
    assert metrics_from_events(read_events(out / "events.jsonl")).success


def test_agents_csv_no_teleport(case_run):
    _, out = case_run
    rows = np.genfromtxt(out / "agents.csv", delimiter=",", skip_header=1, usecols=(0, 1, 3, 4, 5))
    p = sim_mod.MissionParams()
    for aid in (0, 1):
        xyz = rows[rows[:, 1] == aid][:, 2:]
        steps = np.linalg.norm(np.diff(xyz, axis=0), axis=1)
        # six-decimal rounding in the trace adds at most ~2e-6 per step
        assert steps.max() <= p.v_max * p.dt + 2e-6


def test_only_pre_placed_completes_immediately():
    doc = {"bricks": [{"id": 0, "layer": 0, "target_center": [0, 0, 0.05],
                       "dims": [0.4, 0.2, 0.1], "marker_ids": [0, 1], "pre_placed": True}],
           "agents": [{"id": 0, "kind": "brick", "home": [1, 1, 0]}]}
    r = run_mission(doc, SimConfig())
    assert r.metrics.success and r.metrics.makespan == 0.0 and r.metrics.sim_time == 0.0
    assert not [e for e in r.events if e["kind"] == "assigned"]


def test_timeout():
    from aerialmason.scenarios import case_study
    r = run_mission(case_study(), SimConfig(max_sim_time=5.0))
    assert not r.metrics.success and r.metrics.failure_reason == "timeout"
    assert r.metrics.sim_time == pytest.approx(5.0 + 0.02, abs=1e-9)


def test_conflict_pruning_prevents_clearance_violation():
    slow = SimConfig().with_param("v_spray", 0.01)
    unsafe = run_mission(close_stacks_doc(), replace(slow, disable_conflict_pruning=True))
    assert unsafe.metrics.clearance_violation
    assert any(e["kind"] == "clearance_violation" for e in unsafe.events)
    safe = run_mission(close_stacks_doc(), slow)
    assert not safe.metrics.clearance_violation and safe.metrics.success
    assert not any(e["kind"] == "clearance_violation" for e in safe.events)


def test_clearance_monitor():
    m = ClearanceMonitor(1.0)
    got = []
    emit = lambda *a, **k: got.append((a, k))  # noqa: E731
    m.update(0.0, [(0, (0, 0, 1), True, True), (1, (0.5, 0, 1), False, True)], emit)
    assert math.isinf(m.min_separation)  # a grounded agent does not count
    m.update(0.1, [(0, (0, 0, 1), True, False), (1, (0.5, 0, 1), True, True)], emit)
    assert m.min_separation == 0.5 and not m.violation and not got
    m.update(0.2, [(0, (0, 0, 1), True, True), (1, (0.6, 0, 1.6), True, True)], emit)
    assert m.violation and len(got) == 1
    assert got[0][1]["distance"] == pytest.approx(math.sqrt(0.72))
    m.update(0.3, [(0, (0, 0, 1), True, True), (1, (0.6, 0, 1.0), True, True)], emit)
    assert len(got) == 1  # still the same encounter
    m.update(0.4, [(0, (0, 0, 1), True, True), (1, (3, 0, 1), True, True)], emit)
    m.update(0.5, [(0, (0, 0, 1), True, True), (1, (0.2, 0, 1), True, True)], emit)
    assert len(got) == 2 and m.min_task_separation == pytest.approx(0.2)


def test_with_param_routing():
    c = SimConfig()
    assert c.with_param("dt", "0.05").dt == 0.05
    assert c.with_param("sim.max_task_retries", "none").max_task_retries is None
    assert c.with_param("params.v_spray", "0.2").overrides == {"v_spray": 0.2}
    assert c.with_param("p_occ", 1).overrides == {"p_occ": 1.0}
    for bad in ("nonsense", "sim.v_spray", "foo.dt"):
        with pytest.raises(KeyError):
            c.with_param(bad, 1)
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(perception_every=0)


def test_r_c_override_rebuilds_conflicts(case_bp):
    # a tiny clearance removes every conflict, so A1 no longer waits for B0
    r = run_mission(case_bp, SimConfig().with_param("r_c", 0.01))
    t_a1 = next(e["t"] for e in r.events if e["kind"] == "assigned" and e["task"] == "A1")
    t_b0 = next(e["t"] for e in r.events if e["kind"] == "completed" and e["task"] == "B0")
    assert t_a1 < t_b0


def test_invariant_break_aborts(case_bp, monkeypatch):
    def broken(self):
        raise AgentInvariantError("injected")
    monkeypatch.setattr(BrickAgent, "check_invariants", broken)
    with pytest.raises(SimulationError, match="injected"):
        run_mission(case_bp, SimConfig())


def test_bad_override_rejected(case_bp):
    with pytest.raises(ValueError):
        run_mission(case_bp, SimConfig().with_param("v_max", -1))
