import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rslmanifold.errors import InvalidArgument, RegimeViolation
from rslmanifold.geometry import (
    SphereSpec,
    ball_volume_bounds,
    build_net,
    cap_volume,
    cap_volume_exact,
    cap_volume_series,
    covering_number_bound,
    farthest_point_order,
    geodesic_distance,
    series_coefficient,
    sphere_surface_volume,
    unit_ball_volume,
)


@pytest.mark.parametrize("d,expected", [(1, 2.0), (2, math.pi), (3, 4 * math.pi / 3)])
def test_unit_ball_volume_small_dimensions(d, expected):
    assert unit_ball_volume(d) == pytest.approx(expected, rel=1e-15)


def test_surface_volume_of_unit_two_sphere():
    assert sphere_surface_volume(2, 1.0) == pytest.approx(4 * math.pi, rel=1e-15)


def test_standard_sphere_basis_is_orthonormal():
    s = SphereSpec.standard(3, 2.0, 7)
    assert np.max(np.abs(s.basis.T @ s.basis - np.eye(4))) <= 1e-12
    assert s.D == 7


def test_sphere_rejects_bad_basis_and_dimension():
    with pytest.raises(InvalidArgument):
        SphereSpec(2, 1.0, np.zeros(3), np.ones((3, 3)))
    with pytest.raises(InvalidArgument):
        SphereSpec.standard(3, 1.0, 3)


def test_sampled_points_lie_on_surface():
    s = SphereSpec.standard(2, 3.0, 6, center=np.arange(6.0))
    X = s.sample(1000, np.random.default_rng(0))
    dist = np.linalg.norm(X - s.center, axis=1)
    assert np.max(np.abs(dist - 3.0)) <= 1e-9 * 3.0


def test_cap_examples():
    assert cap_volume_exact(2, 1.0, 0.0) == 0.0
    assert cap_volume_exact(2, 1.0, 0.5) == pytest.approx(math.pi * 0.25, rel=1e-12)


def test_cap_exact_d3_against_closed_form():
    # d=3 cap: tau^3 (2 theta - sin 2 theta) * pi with theta the polar half-angle
    tau, r = 1.0, 0.3
    th = 2 * math.asin(r / (2 * tau))
    ref = math.pi * tau**3 * (2 * th - math.sin(2 * th))
    assert cap_volume_exact(3, tau, r) == pytest.approx(ref, rel=1e-12)


def test_full_sphere_cap():
    assert cap_volume_exact(4, 1.5, 3.0) == pytest.approx(sphere_surface_volume(4, 1.5), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 8), tau=st.floats(0.1, 10), frac=st.floats(0.0, 1.0))
def test_betainc_cap_matches_quadrature(d, tau, frac):
    r = 2 * tau * frac
    assert float(cap_volume(d, tau, r)) == pytest.approx(cap_volume_exact(d, tau, r),
                                                         rel=1e-10, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 6), tau=st.floats(0.1, 5), a=st.floats(0.0, 1.0), b=st.floats(0.0, 1.0))
def test_cap_volume_is_monotone_in_r(d, tau, a, b):
    lo, hi = sorted((a, b))
    assert cap_volume_exact(d, tau, 2 * tau * lo) <= cap_volume_exact(d, tau, 2 * tau * hi) * (1 + 1e-12)


def test_series_coefficients():
    assert series_coefficient(2) == 0.0
    assert series_coefficient(3) == pytest.approx(0.075, rel=1e-15)
    assert cap_volume_series(2, 1.0, 0.1) == pytest.approx(math.pi * 0.01, rel=1e-15)
    assert cap_volume_series(2, 1.0, 0.1) == pytest.approx(cap_volume_exact(2, 1.0, 0.1), rel=1e-12)
    with pytest.raises(RegimeViolation):
        cap_volume_series(3, 1.0, 0.5)


def test_series_error_is_fourth_order():
    err = [abs(cap_volume_series(3, 1.0, r) / cap_volume_exact(3, 1.0, r) - 1) for r in (0.1, 0.05)]
    assert err[1] < err[0] / 10


def test_ball_volume_bounds_example():
    b = ball_volume_bounds(2, 1.0, 0.1)
    assert b.lower == pytest.approx(0.9975 * math.pi * 0.01, rel=1e-12)
    r1 = 1 - math.sqrt(0.8)
    assert b.r1 == pytest.approx(r1, rel=1e-15)
    assert b.upper == pytest.approx(math.pi * (1 / (1 - 2 * r1)) ** 2 * r1**2, rel=1e-14)
    # the quoted worked value 0.0562659 agrees to 4e-5
    assert b.upper == pytest.approx(0.0562659, rel=1e-4)
    assert b.lower <= cap_volume_exact(2, 1.0, 0.1) <= b.upper


def test_ball_volume_bounds_small_r_limit():
    b = ball_volume_bounds(3, 1.0, 1e-6)
    flat = unit_ball_volume(3) * 1e-18
    assert b.lower / flat == pytest.approx(1.0, rel=1e-5)
    assert b.upper / flat == pytest.approx(1.0, rel=1e-5)


def test_ball_volume_bounds_epsilon_regime():
    eps = 0.5
    r = eps * 1.0 / (72 * 2)
    b = ball_volume_bounds(2, 1.0, r)
    assert b.epsilon_regime(eps)
    flat = math.pi * r * r
    assert (1 - eps / 6) * flat <= b.lower and b.upper <= (1 + eps / 6) * flat


def test_ball_volume_bounds_upper_infinite_past_three_eighths():
    assert math.isinf(ball_volume_bounds(2, 1.0, 0.4).upper)
    with pytest.raises(RegimeViolation):
        ball_volume_bounds(2, 1.0, 0.5)


@settings(max_examples=80, deadline=None)
@given(d=st.integers(1, 6), tau=st.floats(0.2, 5), frac=st.floats(1e-4, 0.49))
def test_sandwich_property(d, tau, frac):
    r = frac * tau
    b = ball_volume_bounds(d, tau, r)
    v = cap_volume_exact(d, tau, r)
    assert b.lower <= v * (1 + 1e-12)
    assert v <= b.upper * (1 + 1e-12)


def test_geodesic_examples():
    s = SphereSpec.standard(2, 2.0)
    p = np.array([2.0, 0, 0])
    assert geodesic_distance(s, p, -p) == pytest.approx(2 * math.pi, rel=1e-12)
    assert geodesic_distance(s, p, np.array([0, 2.0, 0])) == pytest.approx(math.pi, rel=1e-12)
    assert geodesic_distance(s, p, p) == 0.0
    with pytest.raises(InvalidArgument):
        geodesic_distance(s, p, np.array([1.0, 0, 0]))


def test_covering_bound_examples():
    assert covering_number_bound(4 * math.pi, 2, 1.0, 1.0) == 18
    want = math.ceil(4 * math.pi / ((math.sqrt(3) / 2) ** 2 * math.pi))
    assert covering_number_bound(4 * math.pi, 2, 1.0, 2.0) == want
    for d in (1, 2, 3):
        a = covering_number_bound(10.0, d, 1.0, 0.4)
        b = covering_number_bound(10.0, d, 1.0, 0.2)
        cos_ratio = (math.cos(math.asin(0.1)) / math.cos(math.asin(0.05))) ** d
        # ceilings can lose one unit on each side
        assert b >= 2**d * cos_ratio * (a - 1)


def _cover_radius(net, pts):
    d = np.linalg.norm(pts[:, None, :] - net[None, :, :], axis=2)
    return d.min(axis=1).max()


def test_build_net_covers_and_respects_bound():
    s = SphereSpec.standard(2, 1.0)
    net = build_net(s, 1.0, seed=0)
    assert len(net) <= covering_number_bound(s.volume, 2, 1.0, 1.0)
    probe = s.sample(5000, np.random.default_rng(9))
    assert _cover_radius(net, probe) <= 1.0 + 0.05


def test_build_net_examples():
    s = SphereSpec.standard(2, 1.0)
    assert len(build_net(s, 2.0, 0)) == 1
    circle = SphereSpec.standard(1, 1.0)
    quad = np.array([[1, 0], [0, 1], [-1, 0], [0, -1.0]])
    pts = circle.sample(2000, np.random.default_rng(1))
    assert _cover_radius(quad, pts) <= math.sqrt(2) + 1e-12
    a, b, c = build_net(s, 0.5, 1), build_net(s, 0.5, 1), build_net(s, 0.5, 2)
    assert np.array_equal(a, b)
    assert a.shape != c.shape or not np.array_equal(a, c)


def test_farthest_point_order_separation():
    pts = SphereSpec.standard(2, 1.0).sample(2000, np.random.default_rng(3))
    idx, rad = farthest_point_order(pts, stop_radius=0.5)
    net = pts[idx]
    dd = np.linalg.norm(net[:, None] - net[None], axis=2)
    np.fill_diagonal(dd, np.inf)
    assert dd.min() > 0.5
    assert rad <= 0.5
