import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rslmanifold.errors import InvalidArgument, RegimeWarning
from rslmanifold.geometry import SphereSpec, ball_volume_bounds, unit_ball_volume
from rslmanifold.kde import (
    EmpiricalMeasure,
    KDEConfig,
    check_bandwidth_schedule,
    kde_at,
    kde_level_clusters,
    population_fh,
    sup_deviation,
)
from rslmanifold.neighbors import DistanceIndex, radius_neighbors
from rslmanifold.samplers import SphereMixture, UniformSphere, density_at, sample

S2 = UniformSphere(SphereSpec.standard(2, 1.0))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        KDEConfig(0.0, d=2)
    with pytest.raises(InvalidArgument):
        KDEConfig(0.1)
    assert KDEConfig(0.1, "ambient").exponent(5) == 5


def test_single_point_and_far_probe():
    cfg = KDEConfig(0.5, d=2)
    X = np.array([[1.0, 0.0, 0.0]])
    assert kde_at(X, X, cfg)[0] == pytest.approx(1 / (math.pi * 0.25), rel=1e-15)
    assert kde_at(X, np.array([[5.0, 0, 0]]), cfg)[0] == 0.0


def test_estimator_is_neighbor_count():
    X = sample(S2, None, 500, 1).observed
    cfg = KDEConfig(0.3, d=2)
    adj = radius_neighbors(DistanceIndex(X), 0.3)
    counts = np.array([len(a) + 1 for a in adj])
    np.testing.assert_array_equal(kde_at(X, X, cfg), (counts / 500) / cfg.normaliser(3))


def test_population_fh_uniform_sphere():
    cfg = KDEConfig(0.5, d=2)
    fh, mc = population_fh(S2, np.array([[0, 0, 1.0]]), cfg)
    assert fh[0] == pytest.approx(1 / (4 * math.pi), rel=1e-12) and not mc[0]
    far, _ = population_fh(S2, np.array([[0, 0, 3.0]]), cfg)
    assert far[0] == 0.0


def test_kde_unbiased_on_uniform_sphere():
    cfg = KDEConfig(0.5, d=2)
    x = np.array([[0, 0, 1.0]])
    vals = np.array([kde_at(sample(S2, None, 2000, s).observed, x, cfg)[0] for s in range(50)])
    f = 1 / (4 * math.pi)
    se = vals.std(ddof=1) / math.sqrt(50)
    assert abs(vals.mean() - f) <= 3 * se


def test_population_sandwich_in_epsilon_regime():
    mix = SphereMixture.default(2, 1.0)
    eps = 0.4
    h = eps * 1.0 / (72 * 2)
    cfg = KDEConfig(h, d=2)
    rng = np.random.default_rng(0)
    probes = mix.sphere.sample(500, rng)
    f, _ = density_at(mix, probes)
    fh, _ = population_fh(mix, probes, cfg, seed=1)
    # constant-density neighbourhoods only: skip probes within h of a bump edge
    ang = np.arccos(np.clip(probes @ mix.centers.T, -1, 1))
    edge = np.min(np.abs(ang - mix.bump_angle), axis=1) > 2 * h
    assert edge.sum() > 400
    b = ball_volume_bounds(2, 1.0, h)
    assert (1 - eps / 6) * math.pi * h * h <= b.lower
    assert np.all(fh[edge] >= (1 - eps / 6) * f[edge] * (1 - 1e-12))
    assert np.all(fh[edge] <= (1 + eps / 6) * f[edge] * (1 + 1e-12))


def test_sup_deviation_self_consistency():
    X = sample(S2, None, 300, 2).observed
    rep = sup_deviation(X, EmpiricalMeasure(X), KDEConfig(0.05, d=2), probes=X)
    assert rep.deviation == 0.0


def test_sup_deviation_calibration_at_large_n():
    # threshold frozen from a calibration run on seeds 100..109 (max 0.204 f_max)
    cfg = KDEConfig(0.3, d=2)
    fmax = 1 / (4 * math.pi)
    for seed in range(10):
        X = sample(S2, None, 20_000, seed).observed
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            rep = sup_deviation(X, S2, cfg, seed=seed, net_seed=0)
        assert any(issubclass(x.category, RegimeWarning) for x in w)
        assert not rep.regime_ok
        assert rep.deviation <= 0.25 * fmax


def test_regime_ok_when_h_small():
    m = UniformSphere(SphereSpec.standard(2, 2.4))
    X = sample(m, None, 500, 0).observed
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = sup_deviation(X, m, KDEConfig(0.3, d=2), seed=0)
    assert rep.regime_ok and rep.ratio > 0


def test_level_clusters_examples():
    X = sample(S2, None, 300, 3).observed
    cfg = KDEConfig(0.3, d=2)
    comps = kde_level_clusters(X, cfg, 0.0, 3.0)
    assert len(comps) == 1 and len(comps[0]) == 300
    assert kde_level_clusters(X, cfg, 1e6, 3.0) == []


def test_level_clusters_two_caps():
    s = SphereSpec.standard(2, 1.0)
    centers = np.array([[0, 0, 1.0], [0, 0, -1.0]])
    mix = SphereMixture(s, centers, 0.5, 0.9, 0.1)
    smp = sample(mix, None, 3000, 4)
    cfg = KDEConfig(0.2, d=2)
    bump = 0.9 / 2 / (math.pi * 0.25) + 0.1 / (4 * math.pi)
    bg = 0.1 / (4 * math.pi)
    comps = kde_level_clusters(smp.observed, cfg, (bump + bg) / 2, 0.2)
    big = [c for c in comps if len(c) > 100]
    assert len(big) == 2
    sides = [np.sign(smp.observed[c, 2]) for c in big]
    assert all(np.all(sd == sd[0]) for sd in sides) and sides[0][0] != sides[1][0]


def test_bandwidth_schedule_checks():
    good = check_bandwidth_schedule(lambda n: n ** (-1 / 4), 2)
    assert all(good.values())
    const = check_bandwidth_schedule(lambda n: 0.1, 2)
    assert not const["h_decreasing"]


@settings(max_examples=25, deadline=None)
@given(h=st.floats(0.05, 1.0), m=st.integers(1, 4))
def test_normaliser(h, m):
    cfg = KDEConfig(h, "ambient", D=m)
    assert cfg.normaliser() == pytest.approx(unit_ball_volume(m) * h**m, rel=1e-14)
