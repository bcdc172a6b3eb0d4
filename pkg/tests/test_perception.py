import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from aerialmason.perception import (CameraModel, ConfidenceWindow, FilterWeights, MarkerGeometry,
                                    PerceptionDomainError, TagDetection, confidence,
                                    estimate_brick_pose, filter_cost, filter_gradient, in_fov,
                                    marker_positions, refine_marker_pair, simulate_camera,
                                    update_window)

D = 0.175
GEOM = MarkerGeometry(D)
W = FilterWeights()
coord = st.floats(-1, 1, allow_nan=False)
point = st.tuples(coord, coord, coord).map(np.array)


def scipy_refine(m1, m2, d=D, w=W, start=None):
    x0 = np.concatenate([m1, m2]) if start is None else np.asarray(start, float)
    res = minimize(lambda x: filter_cost(x[:3], x[3:], m1, m2, d, w), x0,
                   jac=lambda x: filter_gradient(x[:3], x[3:], m1, m2, d, w),
                   method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 1000})
    return res.x[:3], res.x[3:], res.fun


# -- camera -----------------------------------------------------------------


def test_far_uav_sees_nothing(rng):
    t1, t2 = simulate_camera([10, 10, 1.2], [0, 0, 0.1], 0.0, (0, 1), GEOM, rng)
    assert not t1.valid and not t2.valid
    assert np.all(np.isnan(t1.position))


def test_noiseless_camera_returns_truth(rng):
    cam = CameraModel(sigma=0.0, yaw_sigma=0.0, p_occ=0.0)
    t1, t2 = simulate_camera([0, 0, 1.2], [0.01, 0.02, 0.1], 0.3, (4, 5), GEOM, rng, cam)
    p1, p2 = marker_positions([0.01, 0.02, 0.1], 0.3, GEOM)
    assert t1.valid and t2.valid and (t1.tag_id, t2.tag_id) == (4, 5)
    np.testing.assert_array_equal(t1.position, p1)
    np.testing.assert_array_equal(t2.position, p2)
    assert t1.yaw == 0.3


def test_fov_grows_with_altitude():
    half = math.radians(30)
    pt = np.array([0.5, 0.0, 0.0])
    assert not in_fov(np.array([0, 0, 0.8]), pt, half)  # reach 0.462
    assert in_fov(np.array([0, 0, 0.9]), pt, half)  # reach 0.520
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2, 2, size=(500, 3))
    pts[:, 2] = 0
    low = sum(in_fov(np.array([0, 0, 1.0]), p, half) for p in pts)
    high = sum(in_fov(np.array([0, 0, 2.0]), p, half) for p in pts)
    assert high > low
    assert all(in_fov(np.array([0, 0, 2.0]), p, half)
               for p in pts if in_fov(np.array([0, 0, 1.0]), p, half))


def test_camera_random_stream_independent_of_visibility():
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    simulate_camera([0, 0, 1.2], [0, 0, 0.1], 0.0, (0, 1), GEOM, a)
    simulate_camera([50, 0, 1.2], [0, 0, 0.1], 0.0, (0, 1), GEOM, b)
    assert a.random() == b.random()


def test_occlusion_rate():
    rng = np.random.default_rng(2)
    cam = CameraModel(p_occ=0.25)
    valid = [simulate_camera([0, 0, 1.2], [0, 0, 0.1], 0.0, (0, 1), GEOM, rng, cam)[0].valid
             for _ in range(4000)]
    assert np.mean(valid) == pytest.approx(0.75, abs=0.03)


# -- filter -----------------------------------------------------------------


def test_consistent_measurements_are_a_fixed_point():
    m1, m2 = np.array([0.0, 0.2, 0.5]), np.array([D, 0.2, 0.5])
    r = refine_marker_pair(m1, m2, GEOM)
    np.testing.assert_array_equal(r.p1, m1)
    np.testing.assert_array_equal(r.p2, m2)
    assert filter_cost(r.p1, r.p2, m1, m2, D) == 0.0
    assert r.iterations == 0 and not r.fallback


def test_tilted_pair_matches_generic_minimizer():
    m1, m2 = np.array([0, 0, 0.50]), np.array([0.175, 0, 0.52])
    r = refine_marker_pair(m1, m2, GEOM)
    q1, q2, fun = scipy_refine(m1, m2)
    np.testing.assert_allclose(r.p1, q1, atol=1e-7)
    np.testing.assert_allclose(r.p2, q2, atol=1e-7)
    assert abs(r.p1[2] - r.p2[2]) < 0.02
    assert abs(np.linalg.norm(r.p1 - r.p2) - D) < abs(np.linalg.norm(m1 - m2) - D)
    assert filter_cost(r.p1, r.p2, m1, m2, D) == pytest.approx(fun, abs=1e-12)


def test_coincident_measurements_split_along_x():
    m = np.array([0.3, -0.2, 0.4])
    r = refine_marker_pair(m, m, GEOM)
    sep = r.p1 - r.p2
    # the stationary separation balances proximity against the distance prior
    s_star = 2 * W.w_dist * D / (W.w_prox + 2 * W.w_dist)
    assert np.linalg.norm(sep) == pytest.approx(s_star, abs=1e-8)
    np.testing.assert_allclose(sep / np.linalg.norm(sep), [1, 0, 0], atol=1e-8)
    np.testing.assert_allclose(0.5 * (r.p1 + r.p2), m, atol=1e-12)
    assert np.linalg.norm(filter_gradient(r.p1, r.p2, m, m, D)) < 1e-6
    # a generic minimizer started off the degenerate point reaches the same cost
    q1, q2, fun = scipy_refine(m, m, start=np.concatenate([m + [1e-3, 0, 0], m - [1e-3, 0, 0]]))
    assert filter_cost(r.p1, r.p2, m, m, D) == pytest.approx(
        filter_cost(q1, q2, m, m, D), abs=1e-10)


def test_non_finite_measurement():
    with pytest.raises(PerceptionDomainError):
        refine_marker_pair([np.nan, 0, 0], [0, 0, 0], GEOM)
    with pytest.raises(PerceptionDomainError):
        MarkerGeometry(0.0)


@given(point, point)
def test_gradient_matches_finite_differences(p1, p2):
    m1 = p1 + 0.01
    m2 = p2 - 0.02
    g = filter_gradient(p1, p2, m1, m2, D)
    x = np.concatenate([p1, p2])
    if np.linalg.norm(p1 - p2) < 1e-3:
        return  # the distance term is not differentiable at coincidence
    h = 1e-6
    fd = np.empty(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        fd[i] = (filter_cost((x + e)[:3], (x + e)[3:], m1, m2, D)
                 - filter_cost((x - e)[:3], (x - e)[3:], m1, m2, D)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


@given(point, st.tuples(*[st.floats(-0.05, 0.05)] * 3).map(np.array),
       st.floats(0, 2 * math.pi))
def test_filter_properties(center, noise, yaw):
    m1 = center.copy()
    m2 = center + D * np.array([math.cos(yaw), math.sin(yaw), 0.0]) + noise
    r = refine_marker_pair(m1, m2, GEOM)
    assert not r.fallback
    assert np.linalg.norm(filter_gradient(r.p1, r.p2, m1, m2, D)) < 1e-6
    assert filter_cost(r.p1, r.p2, m1, m2, D) <= filter_cost(m1, m2, m1, m2, D)
    # the combined constraint penalty cannot grow; the distance residual alone can
    penalty = lambda a, b: (np.linalg.norm(a - b) - D) ** 2 + (a[2] - b[2]) ** 2  # noqa: E731
    assert penalty(r.p1, r.p2) <= penalty(m1, m2) + 1e-12
    assert abs(r.p1[2] - r.p2[2]) <= abs(m1[2] - m2[2]) + 1e-12


# -- pose -------------------------------------------------------------------


def det(tag_id, p, yaw=0.0):
    return TagDetection(tag_id, np.asarray(p, float), yaw, True)


def test_two_tag_symmetric_pose():
    c, theta, source, fallback = estimate_brick_pose(det(0, [0.175, 0, 0.3]),
                                                     det(1, [0, 0, 0.3]), GEOM)
    np.testing.assert_allclose(c, [0.0875, 0, 0.3], atol=1e-15)
    assert theta == 0.0 and source == "both_tags" and not fallback


def test_single_tag_pose():
    c, theta, source, _ = estimate_brick_pose(det(0, [1, 1, 0.3], math.pi / 2), None, GEOM)
    np.testing.assert_allclose(c, [1, 0.9125, 0.3], atol=1e-12)
    assert theta == pytest.approx(math.pi / 2) and source == "tag1_only"
    invalid = TagDetection(0, np.full(3, np.nan), math.nan, False)
    c2, _, source2, _ = estimate_brick_pose(invalid, det(1, [1, 1, 0.3], 0.0), GEOM)
    np.testing.assert_allclose(c2, [1 + D / 2, 1, 0.3])
    assert source2 == "tag2_only"


def test_no_tags():
    assert estimate_brick_pose(None, None, GEOM) is None


@given(point, st.floats(-math.pi, math.pi))
def test_pose_roundtrip_noiseless(center, yaw):
    p1, p2 = marker_positions(center, yaw, GEOM)
    c, theta, _, _ = estimate_brick_pose(det(0, p1, yaw), det(1, p2, yaw), GEOM)
    np.testing.assert_allclose(c, center, atol=1e-9)
    assert math.remainder(theta - yaw, 2 * math.pi) == pytest.approx(0, abs=1e-9)
    for tag, p in ((0, p1), (1, p2)):
        pair = (det(tag, p, yaw), None) if tag == 0 else (None, det(tag, p, yaw))
        c1, t1, _, _ = estimate_brick_pose(*pair, GEOM)
        np.testing.assert_allclose(c1, center, atol=1e-12)
        assert t1 == pytest.approx(yaw)


# -- window and confidence --------------------------------------------------


def test_identical_samples_full_confidence():
    w = ConfidenceWindow(30, 0.04)
    for _ in range(30):
        est = update_window(w, (np.array([1.0, 2.0, 0.1]), 0.5))
    assert w.full and est.confidence == 1.0 and est.sigma_max == 0.0


def test_confidence_unit_cases():
    assert confidence(0.0, 0.04) == 1.0
    assert confidence(0.04, 0.04) == 0.0
    assert abs(confidence(0.02, 0.04) - 0.5) < 1e-12
    assert confidence(0.5, 0.04) == 0.0


def test_window_sigma_example():
    # samples with std 2 cm in x and 1 cm in y
    w = ConfidenceWindow(4, 0.04)
    base = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], float)
    sx, sy = 0.02 / np.std(base[:, 0], ddof=1), 0.01 / np.std(base[:, 1], ddof=1)
    for bx, by in base:
        est = update_window(w, (np.array([bx * sx, by * sy, 0.0]), 0.0))
    assert est.sigma_max == pytest.approx(0.02, abs=1e-15)
    assert est.confidence == pytest.approx(0.5, abs=1e-12)


def test_window_rolls_and_needs_two_samples():
    w = ConfidenceWindow(3, 0.04)
    est = update_window(w, (np.zeros(3), 0.0))
    assert est.confidence == 0.0 and est.center is not None
    for k in range(5):
        update_window(w, (np.array([k, 0.0, 0.0]), 0.0))
    assert [p[0] for p in w.positions] == [2.0, 3.0, 4.0]
    assert update_window(ConfidenceWindow(), None).source == "none"
    with pytest.raises(PerceptionDomainError):
        ConfidenceWindow(1)


def test_circular_yaw_mean():
    w = ConfidenceWindow(2, 0.04)
    update_window(w, (np.zeros(3), math.pi - 0.1))
    est = update_window(w, (np.zeros(3), -math.pi + 0.1))
    assert abs(abs(est.yaw) - math.pi) < 1e-12


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1))
def test_confidence_monotone(a, b, tol):
    lo, hi = sorted((a, b))
    assert 0.0 <= confidence(hi, tol) <= confidence(lo, tol) <= 1.0


def test_window_beats_single_frames():
    rng = np.random.default_rng(9)
    cam = CameraModel(sigma=0.02, p_occ=0.0)
    truth = np.array([0.0, 0.0, 0.1])
    win_err, raw_err = [], []
    for _ in range(100):
        w = ConfidenceWindow(30, 0.04)
        for _ in range(30):
            t1, t2 = simulate_camera([0, 0, 1.2], truth, 0.0, (0, 1), GEOM, rng, cam)
            c, theta, _, _ = estimate_brick_pose(t1, t2, GEOM)
            raw_err.append(np.hypot(*(c[:2] - truth[:2])))
            est = update_window(w, (c, theta))
        win_err.append(np.hypot(*(est.center[:2] - truth[:2])))
    assert np.mean(win_err) < np.mean(raw_err)
    assert np.mean(win_err) < 0.03
