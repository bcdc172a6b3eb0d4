"""Wall blueprint: data model, parsing, task derivation and the task graphs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Iterator

import networkx as nx
import numpy as np

MIN_OVERLAP = 0.01  # m; narrower supports are treated as no contact
LAYER_TOL = 0.01  # m

BRICK = "brick"
ADHESION = "adhesion"


class BlueprintError(ValueError):
    """Base class for blueprint problems. ``field`` names the offending key."""

    code = "blueprint"

    def __init__(self, message: str, field: str | None = None, brick: int | None = None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.brick = brick

    def finding(self) -> "Finding":
        return Finding(self.code, self.field, self.message, self.brick)


class SchemaError(BlueprintError):
    code = "schema"


class ValidationError(BlueprintError):
    code = "validation"


class LayoutError(BlueprintError):
    code = "layout"


@dataclass(frozen=True)
class Finding:
    code: str
    field: str | None
    message: str
    brick: int | None = None

    def to_dict(self) -> dict:
        return {"code": self.code, "field": self.field, "message": self.message,
                "brick": self.brick}


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MissionParams:
    """Mission-wide parameters. Every field may be set in the blueprint's ``params``."""

    # planning / perception values used in the flight experiments
    r_c: float = 1.5
    h_cr: float = 1.2
    t_f: float = 7.0
    d: float = 0.175
    w_prox: float = 2.0
    w_dist: float = 1.0
    w_plane: float = 1.0
    N_W: int = 30
    sigma_tol: float = 0.04
    C_th: float = 0.75
    # engineering defaults
    r_pl: float = 0.05
    dt: float = 0.02
    seed: int = 0
    r_mag: float = 0.05
    delta_h: float = 0.15
    h_max: float = 2.5
    t_to: float = 10.0
    t_est: float = 5.0
    v_spray: float = 0.1
    spray_offset: float = 0.3
    t_desc_adhesion: float = 3.0
    eps_stab: float = 0.05
    t_stab: float = 1.0
    t_stab_timeout: float = 10.0
    eps_align: float = 0.02
    kp: float = 1.2
    ki: float = 0.05
    kd: float = 0.3
    v_max: float = 1.0
    tau: float = 0.15
    i_clamp: float = 0.1
    l_rod: float = 0.45
    cam_sigma: float = 0.005
    cam_yaw_sigma: float = 0.02
    p_occ: float = 0.05
    fov_half_angle: float = math.radians(30.0)
    pickup_sigma: float = 0.03
    max_fsm_retries: int = 3

    _POSITIVE = ("r_c", "h_cr", "t_f", "d", "w_prox", "w_dist", "w_plane", "N_W",
                 "sigma_tol", "C_th", "r_pl", "dt", "r_mag", "delta_h", "h_max",
                 "t_to", "t_est", "v_spray", "spray_offset", "t_desc_adhesion",
                 "eps_stab", "t_stab", "t_stab_timeout", "eps_align", "v_max", "tau",
                 "i_clamp", "l_rod", "fov_half_angle")
    _NON_NEGATIVE = ("seed", "kp", "ki", "kd", "cam_sigma", "cam_yaw_sigma", "p_occ",
                     "pickup_sigma", "max_fsm_retries")

    def problems(self) -> Iterator[Finding]:
        for name in self._POSITIVE:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                yield Finding("validation", f"params.{name}", f"{name} must be > 0, got {v}")
        for name in self._NON_NEGATIVE:
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                yield Finding("validation", f"params.{name}", f"{name} must be >= 0, got {v}")
        if not 0.0 < self.C_th < 1.0:
            yield Finding("validation", "params.C_th", f"C_th must lie in (0, 1), got {self.C_th}")
        if self.p_occ > 1.0:
            yield Finding("validation", "params.p_occ", f"p_occ must be <= 1, got {self.p_occ}")
        if self.dt >= self.t_f:
            yield Finding("validation", "params.dt", "dt must be smaller than t_f")
        if self.N_W < 2:
            yield Finding("validation", "params.N_W", "N_W must be >= 2")
        if self.h_max < self.h_cr:
            yield Finding("validation", "params.h_max", "h_max must be >= h_cr")
        if self.fov_half_angle >= math.pi / 2:
            yield Finding("validation", "params.fov_half_angle", "fov_half_angle must be < pi/2")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def coerce(cls, name: str, value: Any) -> Any:
        """Convert ``value`` to the type of field ``name`` (used by overrides)."""
        kind = type(getattr(cls(), name))
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(f"{name} expects an integer")
            return int(value)
        if isinstance(value, bool):
            raise ValueError(f"{name} expects a number")
        return float(value)


@dataclass(frozen=True, eq=False)
class BrickSpec:
    id: int
    layer: int
    target_center: np.ndarray
    target_yaw: float
    dims: np.ndarray  # (L, W, H)
    marker_ids: tuple[int, int]
    pickup_approx: np.ndarray | None
    pre_placed: bool = False
    marker_offsets: tuple[tuple[float, float], tuple[float, float]] | None = None
    marker_delta: float = 0.0

    @property
    def height(self) -> float:
        return float(self.dims[2])

    @property
    def top_z(self) -> float:
        return float(self.target_center[2] + self.dims[2] / 2)

    @property
    def long_axis(self) -> int:
        """0 if the (yaw-snapped) brick runs along world x, 1 for world y."""
        quarter = int(round(self.target_yaw / (math.pi / 2))) % 2
        return quarter

    def footprint(self) -> tuple[float, float, float, float]:
        """Axis-aligned ``(xmin, xmax, ymin, ymax)`` after snapping yaw to 90 degrees."""
        L, W = float(self.dims[0]), float(self.dims[1])
        hx, hy = (L / 2, W / 2) if self.long_axis == 0 else (W / 2, L / 2)
        cx, cy = float(self.target_center[0]), float(self.target_center[1])
        return cx - hx, cx + hx, cy - hy, cy + hy


@dataclass(frozen=True, eq=False)
class AdhesionTask:
    id: int
    start: np.ndarray
    length: float
    direction: np.ndarray  # unit 2-vector
    between: tuple[int, int]  # (upper, lower) brick ids

    @property
    def end(self) -> np.ndarray:
        e = self.start.copy()
        e[:2] += self.direction * self.length
        return e


@dataclass(frozen=True)
class PickupSite:
    id: int
    position: np.ndarray


@dataclass(frozen=True)
class AgentSpec:
    id: int
    kind: str
    home: np.ndarray


@dataclass(frozen=True)
class WallPlan:
    bricks: tuple[BrickSpec, ...] = ()

    def brick(self, brick_id: int) -> BrickSpec:
        for b in self.bricks:
            if b.id == brick_id:
                return b
        raise KeyError(brick_id)

    @property
    def pre_placed(self) -> tuple[BrickSpec, ...]:
        return tuple(b for b in self.bricks if b.pre_placed)

    @property
    def pending(self) -> tuple[BrickSpec, ...]:
        return tuple(b for b in self.bricks if not b.pre_placed)


@dataclass(frozen=True)
class WorkspaceSetup:
    pickup_sites: tuple[PickupSite, ...] = ()
    agents: tuple[AgentSpec, ...] = ()


# ---------------------------------------------------------------------------
# tasks and graphs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Task:
    id: str
    kind: str
    sort_key: tuple
    brick: BrickSpec | None = None
    adhesion: AdhesionTask | None = None
    initially_complete: bool = False

    def segment_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Horizontal location as a segment (degenerate for brick tasks)."""
        if self.kind == BRICK:
            p = self.brick.target_center[:2]
            return p, p
        return self.adhesion.start[:2], self.adhesion.end[:2]


class DependencyGraph:
    """Directed task graph; an edge ``(parent, child)`` means *parent needs child done*."""

    def __init__(self, tasks: Iterable[Task], edges: Iterable[tuple[str, str]]):
        self.tasks: dict[str, Task] = {t.id: t for t in tasks}
        self._g = nx.DiGraph()
        self._g.add_nodes_from(self.tasks)
        for parent, child in edges:
            if parent not in self.tasks or child not in self.tasks:
                raise KeyError(f"edge ({parent}, {child}) references an unknown task")
            self._g.add_edge(parent, child)

    @property
    def nodes(self) -> list[str]:
        return sorted(self.tasks, key=lambda t: self.tasks[t].sort_key)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return sorted(self._g.edges)

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self._g)

    @cached_property
    def _descendants(self) -> dict[str, frozenset[str]]:
        return {n: frozenset(nx.descendants(self._g, n)) for n in self._g}

    @cached_property
    def _ancestors(self) -> dict[str, frozenset[str]]:
        return {n: frozenset(nx.ancestors(self._g, n)) for n in self._g}

    def descendants(self, task_id: str) -> frozenset[str]:
        return self._descendants[task_id]

    def ancestors(self, task_id: str) -> frozenset[str]:
        return self._ancestors[task_id]

    def connected(self, a: str, b: str) -> bool:
        """True if a dependency path joins ``a`` and ``b`` in either direction."""
        return b in self._descendants[a] or a in self._descendants[b]

    def kind(self, task_id: str) -> str:
        return self.tasks[task_id].kind

    def order(self, ids: Iterable[str]) -> list[str]:
        return sorted(ids, key=lambda t: self.tasks[t].sort_key)


@dataclass(frozen=True)
class ConflictGraph:
    c_bb: frozenset = frozenset()
    c_ab: frozenset = frozenset()

    @cached_property
    def pairs(self) -> frozenset:
        return self.c_bb | self.c_ab

    def conflicts(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.pairs

    def neighbours(self, task_id: str) -> set[str]:
        out = set()
        for pair in self.pairs:
            if task_id in pair:
                out |= pair - {task_id}
        return out

    def sorted_pairs(self) -> list[tuple[str, str]]:
        return sorted(tuple(sorted(p)) for p in self.pairs)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _vec(value: Any, n: int, where: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise SchemaError(f"{where} must be a list of {n} numbers", where)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"{where} must contain finite numbers", where)
        out.append(float(v))
    return np.array(out)


def _int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where} must be an integer", where)
    return value


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(f"{where} must be a finite number", where)
    return float(value)


def _require(obj: dict, key: str, where: str) -> Any:
    if key not in obj:
        raise SchemaError(f"missing required field {where}.{key}", f"{where}.{key}")
    return obj[key]


_BRICK_KEYS = {"id", "layer", "target_center", "target_yaw", "dims", "marker_ids",
               "pickup_approx", "pickup_site", "pre_placed", "marker_offsets", "marker_delta"}


def _parse_params(raw: Any) -> MissionParams:
    if raw is None:
        return MissionParams()
    if not isinstance(raw, dict):
        raise SchemaError("params must be an object", "params")
    known = MissionParams.field_names()
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise SchemaError(f"unknown parameter params.{key}", f"params.{key}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"params.{key} must be a number", f"params.{key}")
        try:
            values[key] = MissionParams.coerce(key, value)
        except ValueError as exc:
            raise SchemaError(f"params.{key}: {exc}", f"params.{key}") from None
    return MissionParams(**values)


def _parse_brick(raw: Any, i: int, sites: dict[int, PickupSite]) -> BrickSpec:
    where = f"bricks[{i}]"
    if not isinstance(raw, dict):
        raise SchemaError(f"{where} must be an object", where)
    for key in raw:
        if key not in _BRICK_KEYS:
            raise SchemaError(f"unknown field {where}.{key}", f"{where}.{key}")
    bid = _int(_require(raw, "id", where), f"{where}.id")
    layer = _int(_require(raw, "layer", where), f"{where}.layer")
    center = _vec(_require(raw, "target_center", where), 3, f"{where}.target_center")
    dims = _vec(_require(raw, "dims", where), 3, f"{where}.dims")
    markers_raw = _require(raw, "marker_ids", where)
    if not isinstance(markers_raw, (list, tuple)) or len(markers_raw) != 2:
        raise SchemaError(f"{where}.marker_ids must be a pair of integers", f"{where}.marker_ids")
    markers = (_int(markers_raw[0], f"{where}.marker_ids"),
               _int(markers_raw[1], f"{where}.marker_ids"))
    yaw = _number(raw.get("target_yaw", 0.0), f"{where}.target_yaw")
    pre = raw.get("pre_placed", False)
    if not isinstance(pre, bool):
        raise SchemaError(f"{where}.pre_placed must be a boolean", f"{where}.pre_placed")
    pickup = None
    if "pickup_approx" in raw:
        pickup = _vec(raw["pickup_approx"], 3, f"{where}.pickup_approx")
    elif "pickup_site" in raw:
        sid = _int(raw["pickup_site"], f"{where}.pickup_site")
        if sid not in sites:
            raise SchemaError(f"{where}.pickup_site refers to unknown site {sid}",
                              f"{where}.pickup_site")
        pickup = sites[sid].position.copy()
    offsets = None
    if "marker_offsets" in raw:
        o = raw["marker_offsets"]
        if not isinstance(o, (list, tuple)) or len(o) != 2:
            raise SchemaError(f"{where}.marker_offsets must hold two 2-vectors",
                              f"{where}.marker_offsets")
        a = _vec(o[0], 2, f"{where}.marker_offsets")
        b = _vec(o[1], 2, f"{where}.marker_offsets")
        offsets = ((a[0], a[1]), (b[0], b[1]))
    delta = _number(raw.get("marker_delta", 0.0), f"{where}.marker_delta")
    return BrickSpec(bid, layer, center, yaw, dims, markers, pickup, pre, offsets, delta)


def _parse_document(doc: Any) -> tuple[WallPlan, WorkspaceSetup, MissionParams]:
    if not isinstance(doc, dict):
        raise SchemaError("blueprint root must be an object", None)
    for key in doc:
        if key not in ("params", "bricks", "pickup_sites", "agents"):
            raise SchemaError(f"unknown top-level key {key}", key)
    params = _parse_params(doc.get("params"))

    sites_raw = doc.get("pickup_sites", [])
    if not isinstance(sites_raw, list):
        raise SchemaError("pickup_sites must be a list", "pickup_sites")
    sites: dict[int, PickupSite] = {}
    for i, s in enumerate(sites_raw):
        where = f"pickup_sites[{i}]"
        if not isinstance(s, dict):
            raise SchemaError(f"{where} must be an object", where)
        sid = _int(_require(s, "id", where), f"{where}.id")
        if sid in sites:
            raise ValidationError(f"duplicate pickup site id {sid}", f"{where}.id")
        sites[sid] = PickupSite(sid, _vec(_require(s, "position", where), 3, f"{where}.position"))

    bricks_raw = doc.get("bricks", [])
    if not isinstance(bricks_raw, list):
        raise SchemaError("bricks must be a list", "bricks")
    bricks = tuple(_parse_brick(b, i, sites) for i, b in enumerate(bricks_raw))

    agents_raw = doc.get("agents", [])
    if not isinstance(agents_raw, list):
        raise SchemaError("agents must be a list", "agents")
    agents = []
    for i, a in enumerate(agents_raw):
        where = f"agents[{i}]"
        if not isinstance(a, dict):
            raise SchemaError(f"{where} must be an object", where)
        aid = _int(_require(a, "id", where), f"{where}.id")
        kind = _require(a, "kind", where)
        if kind not in (BRICK, ADHESION):
            raise SchemaError(f"{where}.kind must be 'brick' or 'adhesion'", f"{where}.kind")
        agents.append(AgentSpec(aid, kind, _vec(_require(a, "home", where), 3, f"{where}.home")))

    return (WallPlan(bricks),
            WorkspaceSetup(tuple(sites.values()), tuple(agents)),
            params)


def invariant_findings(plan: WallPlan, setup: WorkspaceSetup,
                       params: MissionParams) -> list[Finding]:
    out = list(params.problems())
    seen_ids: set[int] = set()
    seen_markers: dict[int, int] = {}
    for i, b in enumerate(plan.bricks):
        where = f"bricks[{i}]"
        if b.id in seen_ids:
            out.append(Finding("validation", f"{where}.id", f"duplicate brick id {b.id}", b.id))
        seen_ids.add(b.id)
        if b.layer < 0:
            out.append(Finding("validation", f"{where}.layer", f"brick {b.id} has negative layer", b.id))
        if np.any(b.dims <= 0):
            out.append(Finding("validation", f"{where}.dims",
                               f"brick {b.id} dimensions must be positive", b.id))
            continue
        if b.marker_ids[0] == b.marker_ids[1]:
            out.append(Finding("validation", f"{where}.marker_ids",
                               f"brick {b.id} uses marker {b.marker_ids[0]} twice", b.id))
        for m in set(b.marker_ids):
            if m in seen_markers:
                out.append(Finding("validation", f"{where}.marker_ids",
                                   f"marker {m} already used by brick {seen_markers[m]}", b.id))
            seen_markers[m] = b.id
        bottom = b.target_center[2] - b.height / 2
        if abs(bottom - b.layer * b.height) > LAYER_TOL:
            out.append(Finding("validation", f"{where}.target_center",
                               f"brick {b.id} z does not match layer {b.layer}", b.id))
        if not b.pre_placed and b.pickup_approx is None:
            out.append(Finding("validation", f"{where}.pickup_approx",
                               f"pending brick {b.id} has no pickup location", b.id))
    agent_ids = set()
    for i, a in enumerate(setup.agents):
        if a.id in agent_ids:
            out.append(Finding("validation", f"agents[{i}].id", f"duplicate agent id {a.id}"))
        agent_ids.add(a.id)
    return out


def load_blueprint(doc: Any) -> tuple[WallPlan, WorkspaceSetup, MissionParams]:
    """Build and validate the blueprint structures from a decoded JSON document."""
    plan, setup, params = _parse_document(doc)
    problems = invariant_findings(plan, setup, params)
    if problems:
        p = problems[0]
        raise ValidationError(p.message, p.field, p.brick)
    return plan, setup, params


def _read(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read blueprint: {exc}", None) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON at line {exc.lineno}: {exc.msg}", None) from None


def parse_blueprint(path: str | Path) -> tuple[WallPlan, WorkspaceSetup, MissionParams]:
    return load_blueprint(_read(path))


def validate_blueprint(source: str | Path | dict) -> list[Finding]:
    """All findings for a blueprint (schema, invariants, layout). Empty means valid."""
    try:
        doc = source if isinstance(source, dict) else _read(source)
        plan, setup, params = _parse_document(doc)
    except BlueprintError as exc:
        return [exc.finding()]
    findings = invariant_findings(plan, setup, params)
    if not findings:
        findings.extend(layout_findings(plan))
    return findings


# ---------------------------------------------------------------------------
# derivation
# ---------------------------------------------------------------------------


def _overlap(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    return max(a[0], b[0]), min(a[1], b[1])


def _support_pairs(plan: WallPlan) -> list[tuple[BrickSpec, BrickSpec, tuple]]:
    """(upper, lower, footprint-overlap) for every brick resting on another."""
    by_layer: dict[int, list[BrickSpec]] = {}
    for b in plan.bricks:
        by_layer.setdefault(b.layer, []).append(b)
    pairs = []
    for upper in plan.bricks:
        fu = upper.footprint()
        for lower in by_layer.get(upper.layer - 1, ()):
            fl = lower.footprint()
            ox = _overlap((fu[0], fu[1]), (fl[0], fl[1]))
            oy = _overlap((fu[2], fu[3]), (fl[2], fl[3]))
            if ox[1] - ox[0] >= MIN_OVERLAP and oy[1] - oy[0] >= MIN_OVERLAP:
                pairs.append((upper, lower, (ox, oy)))
    return pairs


def layout_findings(plan: WallPlan) -> list[Finding]:
    out = []
    bricks = sorted(plan.bricks, key=lambda b: b.id)
    for i, a in enumerate(bricks):
        fa = a.footprint()
        for b in bricks[i + 1:]:
            if a.layer != b.layer:
                continue
            fb = b.footprint()
            ox = _overlap((fa[0], fa[1]), (fb[0], fb[1]))
            oy = _overlap((fa[2], fa[3]), (fb[2], fb[3]))
            if ox[1] - ox[0] > 1e-9 and oy[1] - oy[0] > 1e-9:
                out.append(Finding("layout", "bricks",
                                   f"bricks {a.id} and {b.id} intersect in layer {a.layer}", a.id))
    supported = {}
    for upper, lower, _ in _support_pairs(plan):
        supported.setdefault(upper.id, []).append(lower)
    for b in bricks:
        if b.layer == 0:
            continue
        supports = supported.get(b.id, [])
        if not supports:
            out.append(Finding("layout", "bricks", f"brick {b.id} has no supporting brick below", b.id))
        elif b.pre_placed and any(not s.pre_placed for s in supports):
            out.append(Finding("layout", "bricks",
                               f"pre-placed brick {b.id} rests on a brick that is not placed yet", b.id))
    return out


def _brick_key(b: BrickSpec) -> tuple:
    return (b.layer, round(float(b.target_center[0]), 9), round(float(b.target_center[1]), 9),
            BRICK, b.id)


def derive_tasks(plan: WallPlan) -> tuple[list[Task], DependencyGraph]:
    """Brick and adhesion tasks plus the dependency graph linking them."""
    problems = layout_findings(plan)
    if problems:
        p = problems[0]
        raise LayoutError(p.message, p.field, p.brick)

    tasks = [Task(f"B{b.id}", BRICK, _brick_key(b), brick=b, initially_complete=b.pre_placed)
             for b in plan.bricks]

    glue = []
    for upper, lower, (ox, oy) in _support_pairs(plan):
        if upper.pre_placed:
            continue
        z = lower.top_z
        if lower.long_axis == 0:
            start = np.array([ox[0], 0.5 * (oy[0] + oy[1]), z])
            length = ox[1] - ox[0]
            direction = np.array([1.0, 0.0])
        else:
            start = np.array([0.5 * (ox[0] + ox[1]), oy[0], z])
            length = oy[1] - oy[0]
            direction = np.array([0.0, 1.0])
        glue.append((upper, lower, start, length, direction))
    glue.sort(key=lambda g: (g[0].layer, round(g[2][0], 9), round(g[2][1], 9), g[0].id, g[1].id))

    edges = []
    for m, (upper, lower, start, length, direction) in enumerate(glue):
        adh = AdhesionTask(m, start, float(length), direction, (upper.id, lower.id))
        key = (upper.layer, round(float(start[0]), 9), round(float(start[1]), 9), ADHESION, m)
        task = Task(f"A{m}", ADHESION, key, adhesion=adh)
        tasks.append(task)
        edges.append((f"B{upper.id}", task.id))
        edges.append((task.id, f"B{lower.id}"))

    dep = DependencyGraph(tasks, edges)
    if not dep.is_acyclic():  # pragma: no cover - layers make cycles impossible
        raise LayoutError("dependency graph contains a cycle", "bricks")
    return [dep.tasks[i] for i in dep.nodes], dep


def _point_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    s = min(1.0, max(0.0, float(np.dot(p - a, ab)) / denom))
    return float(np.linalg.norm(p - (a + s * ab)))


def _segment_segment(a0, a1, b0, b1) -> float:
    # 2-D segments intersect -> 0, otherwise the minimum endpoint-to-segment distance
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1, d2 = orient(b0, b1, a0), orient(b0, b1, a1)
    d3, d4 = orient(a0, a1, b0), orient(a0, a1, b1)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return 0.0
    return min(_point_segment(a0, b0, b1), _point_segment(a1, b0, b1),
               _point_segment(b0, a0, a1), _point_segment(b1, a0, a1))


def task_distance(a: Task, b: Task) -> float:
    """Horizontal distance between the locations of two tasks."""
    a0, a1 = a.segment_xy()
    b0, b1 = b.segment_xy()
    return _segment_segment(a0, a1, b0, b1)


def build_conflict_graph(tasks: Iterable[Task], dep: DependencyGraph, r_c: float) -> ConflictGraph:
    pending = [t for t in tasks if not t.initially_complete]
    c_bb, c_ab = set(), set()
    for i, a in enumerate(pending):
        for b in pending[i + 1:]:
            if a.kind == ADHESION and b.kind == ADHESION:
                continue
            if dep.connected(a.id, b.id):
                continue
            if task_distance(a, b) <= r_c:
                pair = frozenset((a.id, b.id))
                (c_bb if a.kind == b.kind == BRICK else c_ab).add(pair)
    return ConflictGraph(frozenset(c_bb), frozenset(c_ab))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def to_dot(dep: DependencyGraph, conflict: ConflictGraph) -> str:
    lines = ["digraph masonry {", "  rankdir=TB;"]
    for tid in dep.nodes:
        t = dep.tasks[tid]
        shape = "box" if t.kind == BRICK else "ellipse"
        style = ', style=filled, fillcolor="#dddddd"' if t.initially_complete else ""
        lines.append(f'  "{tid}" [label="{tid}", shape={shape}{style}];')
    for parent, child in dep.edges:
        lines.append(f'  "{parent}" -> "{child}";')
    for a, b in conflict.sorted_pairs():
        lines.append(f'  "{a}" -> "{b}" [style=dashed, dir=none, color=red];')
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class Blueprint:
    """Convenience bundle of a parsed blueprint and its derived graphs."""

    plan: WallPlan
    setup: WorkspaceSetup
    params: MissionParams
    tasks: list[Task] = field(default_factory=list)
    dep: DependencyGraph | None = None
    conflict: ConflictGraph | None = None

    @classmethod
    def from_parts(cls, plan, setup, params) -> "Blueprint":
        tasks, dep = derive_tasks(plan)
        return cls(plan, setup, params, tasks, dep, build_conflict_graph(tasks, dep, params.r_c))

    @classmethod
    def load(cls, source: str | Path | dict) -> "Blueprint":
        parts = load_blueprint(source) if isinstance(source, dict) else parse_blueprint(source)
        return cls.from_parts(*parts)
