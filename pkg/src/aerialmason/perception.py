"""Synthetic tag detections, marker-pair filtering and brick pose estimation."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .kernels import bfgs_marker_pair, marker_cost, marker_grad

N_AXIS = np.array([0.0, 0.0, 1.0])


class PerceptionDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TagDetection:
    tag_id: int
    position: np.ndarray
    yaw: float
    valid: bool = True


@dataclass(frozen=True)
class MarkerGeometry:
    d: float = 0.175
    offset1: tuple[float, float] | None = None
    offset2: tuple[float, float] | None = None
    delta: float = 0.0

    def __post_init__(self):
        if not self.d > 0:
            raise PerceptionDomainError("marker separation must be positive")
        if self.offset1 is None:
            object.__setattr__(self, "offset1", (-self.d / 2, 0.0))
        if self.offset2 is None:
            object.__setattr__(self, "offset2", (self.d / 2, 0.0))


@dataclass(frozen=True)
class FilterWeights:
    w_prox: float = 2.0
    w_dist: float = 1.0
    w_plane: float = 1.0


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    center: np.ndarray | None
    yaw: float | None
    confidence: float
    source: str
    sigma_max: float = math.inf

    @property
    def present(self) -> bool:
        return self.source != "none"


@dataclass(frozen=True, eq=False)
class RefineResult:
    p1: np.ndarray
    p2: np.ndarray
    fallback: bool
    iterations: int


@dataclass(frozen=True)
class CameraModel:
    sigma: float = 0.02
    yaw_sigma: float = 0.02
    p_occ: float = 0.05
    fov_half_angle: float = math.radians(30.0)


def rot2(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def marker_positions(center, yaw: float, geom: MarkerGeometry) -> tuple[np.ndarray, np.ndarray]:
    """True world positions of both tags for a brick whose top-face center is ``center``."""
    center = np.asarray(center, dtype=float)
    phi = yaw + geom.delta
    R = rot2(phi)
    p1, p2 = center.copy(), center.copy()
    p1[:2] -= R @ np.asarray(geom.offset1)
    p2[:2] -= R @ np.asarray(geom.offset2)
    return p1, p2


def in_fov(camera: np.ndarray, point: np.ndarray, half_angle: float) -> bool:
    h = camera[2] - point[2]
    if h <= 0:
        return False
    reach = h * math.tan(half_angle)
    return abs(point[0] - camera[0]) <= reach and abs(point[1] - camera[1]) <= reach


def simulate_camera(uav_position, brick_center, brick_yaw: float, marker_ids: tuple[int, int],
                    geom: MarkerGeometry, rng: np.random.Generator,
                    camera: CameraModel = CameraModel()) -> tuple[TagDetection, TagDetection]:
    """Noisy world-frame detections of the two tags of one brick.

    The random stream is consumed identically whether or not a tag is visible.
    """
    cam = np.asarray(uav_position, dtype=float)
    truths = marker_positions(brick_center, brick_yaw, geom)
    out = []
    for tag_id, p in zip(marker_ids, truths):
        u = rng.random()
        noise = rng.standard_normal(4)
        visible = in_fov(cam, p, camera.fov_half_angle) and u >= camera.p_occ
        if visible:
            out.append(TagDetection(tag_id, p + camera.sigma * noise[:3],
                                    brick_yaw + geom.delta + camera.yaw_sigma * noise[3], True))
        else:
            out.append(TagDetection(tag_id, np.full(3, np.nan), math.nan, False))
    return out[0], out[1]


def filter_cost(p1, p2, m1, m2, d, weights: FilterWeights = FilterWeights()) -> float:
    x = np.concatenate([p1, p2]).astype(float)
    return float(marker_cost(x, np.asarray(m1, float), np.asarray(m2, float), float(d),
                             weights.w_prox, weights.w_dist, weights.w_plane))


def filter_gradient(p1, p2, m1, m2, d, weights: FilterWeights = FilterWeights()) -> np.ndarray:
    x = np.concatenate([p1, p2]).astype(float)
    return marker_grad(x, np.asarray(m1, float), np.asarray(m2, float), float(d),
                       weights.w_prox, weights.w_dist, weights.w_plane)


def refine_marker_pair(p1_meas, p2_meas, geom: MarkerGeometry,
                       weights: FilterWeights = FilterWeights(),
                       max_iter: int = 100, gtol: float = 1e-8) -> RefineResult:
    """Pull two noisy marker positions toward the known separation and a level pair."""
    m1 = np.asarray(p1_meas, dtype=float).reshape(3)
    m2 = np.asarray(p2_meas, dtype=float).reshape(3)
    if not (np.all(np.isfinite(m1)) and np.all(np.isfinite(m2))):
        raise PerceptionDomainError("marker measurements must be finite")
    x, ok, it = bfgs_marker_pair(m1, m2, float(geom.d), float(weights.w_prox),
                                 float(weights.w_dist), float(weights.w_plane), max_iter, gtol)
    if not ok:
        return RefineResult(m1.copy(), m2.copy(), True, it)
    return RefineResult(x[:3].copy(), x[3:].copy(), False, it)


def estimate_brick_pose(t1: TagDetection | None, t2: TagDetection | None, geom: MarkerGeometry,
                        weights: FilterWeights = FilterWeights()):
    """Brick center and yaw from whichever tags are valid, else ``None``.

    Returns ``(center, yaw, source, fallback)`` where ``fallback`` reports that the
    filter did not converge and raw detections were used.
    """
    ok1 = t1 is not None and t1.valid
    ok2 = t2 is not None and t2.valid
    if ok1 and ok2:
        r = refine_marker_pair(t1.position, t2.position, geom, weights)
        c = 0.5 * (r.p1 + r.p2)
        theta = math.atan2(r.p1[1] - r.p2[1], r.p1[0] - r.p2[0])
        return c, theta, "both_tags", r.fallback
    for tag, ok, offset, name in ((t1, ok1, geom.offset1, "tag1_only"),
                                  (t2, ok2, geom.offset2, "tag2_only")):
        if ok:
            c = np.asarray(tag.position, dtype=float).copy()
            c[:2] += rot2(tag.yaw) @ np.asarray(offset)
            return c, tag.yaw - geom.delta, name, False
    return None


def confidence(sigma_max: float, sigma_tol: float) -> float:
    return 1.0 - min(1.0, sigma_max / sigma_tol)


@dataclass
class ConfidenceWindow:
    """Rolling window of the most recent pose estimates."""

    capacity: int = 30
    sigma_tol: float = 0.04
    positions: deque = field(default_factory=deque)
    yaws: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 2:
            raise PerceptionDomainError("window capacity must be at least 2")
        self.positions = deque(self.positions, maxlen=self.capacity)
        self.yaws = deque(self.yaws, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def full(self) -> bool:
        return len(self.positions) == self.capacity

    def clear(self) -> None:
        self.positions.clear()
        self.yaws.clear()


def update_window(window: ConfidenceWindow, estimate, source: str = "both_tags") -> PoseEstimate:
    """Push ``(center, yaw)`` (or ``None``) and return the smoothed estimate."""
    if estimate is not None:
        c, theta = estimate[0], estimate[1]
        window.positions.append(np.asarray(c, dtype=float))
        window.yaws.append(float(theta))
    n = len(window)
    if n == 0:
        return PoseEstimate(None, None, 0.0, "none")
    P = np.array(window.positions)
    yaws = np.array(window.yaws)
    center = P.mean(axis=0)
    yaw = math.atan2(np.sin(yaws).mean(), np.cos(yaws).mean())
    if n < 2:
        return PoseEstimate(center, yaw, 0.0, source)
    sig = P.std(axis=0, ddof=1)
    sigma_max = float(max(sig[0], sig[1]))
    return PoseEstimate(center, yaw, confidence(sigma_max, window.sigma_tol), source, sigma_max)
