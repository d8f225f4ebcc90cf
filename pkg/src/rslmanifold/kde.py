"""Ball-kernel density estimates on manifolds and in full dimension.

With K(x) = 1{|x| <= 1} / v_m the estimate at x is a neighbour count, and
its expectation f_h is a ball mass, so both sides of every deviation check
come from exact counts and the mass oracle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidArgument, RegimeWarning
from .geometry import build_net, unit_ball_volume
from .neighbors import DistanceIndex
from .samplers import ball_masses

__all__ = [
    "KDEConfig",
    "EmpiricalMeasure",
    "DeviationReport",
    "kde_at",
    "population_fh",
    "sup_deviation",
    "default_probes",
    "kde_level_clusters",
    "check_bandwidth_schedule",
]


@dataclass(frozen=True)
class KDEConfig:
    """Bandwidth and normalising exponent: m = d (intrinsic) or D (ambient)."""

    h: float
    mode: str = "intrinsic"
    d: int | None = None
    D: int | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidArgument("bandwidth must be positive")
        if self.mode not in ("intrinsic", "ambient"):
            raise InvalidArgument("mode must be 'intrinsic' or 'ambient'")
        if self.mode == "intrinsic" and self.d is None:
            raise InvalidArgument("intrinsic mode needs the manifold dimension d")

    def exponent(self, D=None):
        if self.mode == "intrinsic":
            return self.d
        m = self.D if self.D is not None else D
        if m is None:
            raise InvalidArgument("ambient mode needs D")
        return m

    def normaliser(self, D=None):
        m = self.exponent(D)
        return unit_ball_volume(m) * self.h**m


class EmpiricalMeasure:
    """The empirical distribution of a point set, usable wherever a model is."""

    def __init__(self, points):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self._index = DistanceIndex(self.points)

    def ball_masses(self, centers, r):
        return self._index.count_within(centers, r) / self.points.shape[0]


def kde_at(points, x, cfg: KDEConfig, index: DistanceIndex | None = None):
    """(count(|X_i - x| <= h) / n) / (v_m h^m) at each row of x."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    index = DistanceIndex(X) if index is None else index
    counts = index.count_within(x, cfg.h)
    # same operation order as a ball mass divided by the normaliser
    return (counts / X.shape[0]) / cfg.normaliser(X.shape[1])


def population_fh(model, x, cfg: KDEConfig, noise=None, seed=0, n_mc=20_000):
    """Ball mass of B(x, h) over v_m h^m; returns (values, monte_carlo flags)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mass, _, mc = ball_masses(model, x, cfg.h, noise, seed, n_mc)
    return mass / cfg.normaliser(x.shape[1]), mc


@dataclass(frozen=True)
class DeviationReport:
    deviation: float
    argmax: int
    probe: np.ndarray
    ratio: float
    n: int
    h: float
    regime_ok: bool
    monte_carlo: bool


_NET_CACHE = {}


def _cached_net(sphere, s, seed):
    key = (sphere.d, sphere.tau, sphere.center.tobytes(), sphere.basis.tobytes(), s, seed)
    if key not in _NET_CACHE:
        if len(_NET_CACHE) > 64:
            _NET_CACHE.clear()
        _NET_CACHE[key] = build_net(sphere, s, seed)
    return _NET_CACHE[key]


def default_probes(points, spheres, h, which="both", seed=0):
    """Sample points, an h/2 net on each sphere, or both.

    Nets depend only on (sphere, h, seed) and are cached.
    """
    parts = []
    if which in ("samples", "both"):
        parts.append(np.atleast_2d(points))
    if which in ("net", "both"):
        for j, s in enumerate(spheres):
            parts.append(_cached_net(s, h / 2, seed + j))
    if not parts:
        raise InvalidArgument("probe set must be 'samples', 'net' or 'both'")
    return np.vstack(parts)


def model_spheres(model):
    if hasattr(model, "spheres"):
        return model.spheres()
    if hasattr(model, "sphere"):
        return [model.sphere]
    return []


def sup_deviation(points, model, cfg: KDEConfig, probes=None, tau=None, seed=0,
                  index=None, n_mc=20_000, net_seed=None) -> DeviationReport:
    """max over probes of |f_hat_h - f_h| and its rate-normalised ratio.

    The ratio divides by sqrt(log(1/h) / (n h^m)).  An intrinsic bandwidth
    above tau/8 only warns.  The default probe net uses ``net_seed``
    (falling back to ``seed``).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    if tau is None:
        sph = model_spheres(model)
        tau = min(s.tau for s in sph) if sph else math.inf
    ok = not (cfg.mode == "intrinsic" and cfg.h > tau / 8)
    if not ok:
        warnings.warn(f"h={cfg.h} exceeds tau/8={tau / 8}", RegimeWarning, stacklevel=2)
    if probes is None:
        ns = seed if net_seed is None else net_seed
        probes = default_probes(X, model_spheres(model), cfg.h, "both", ns)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] == 0:
        raise InvalidArgument("probe set is empty")
    fhat = kde_at(X, probes, cfg, index)
    fh, mc = population_fh(model, probes, cfg, seed=seed, n_mc=n_mc)
    dev = np.abs(fhat - fh)
    j = int(np.argmax(dev))
    m = cfg.exponent(X.shape[1])
    scale = math.sqrt(abs(math.log(1.0 / cfg.h)) / (n * cfg.h**m))
    return DeviationReport(float(dev[j]), j, probes[j], float(dev[j]) / scale, n,
                           cfg.h, ok, bool(mc.any()))


def kde_level_clusters(points, cfg: KDEConfig, lam: float, R: float, index=None):
    """Components of the R-linkage graph on {X_i : f_hat(X_i) >= lam}.

    A heuristic for exploration only; it makes no level-set guarantee.
    """
    if lam < 0 or not R > 0:
        raise InvalidArgument("need lam >= 0 and R > 0")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    index = DistanceIndex(X) if index is None else index
    f = kde_at(X, X, cfg, index)
    keep = np.nonzero(f >= lam)[0]
    if keep.size == 0:
        return []
    sub = DistanceIndex(X[keep])
    i, j, _ = sub.radius_edges(R)
    g = coo_matrix((np.ones(i.size), (i, j)), shape=(keep.size, keep.size))
    _, lab = connected_components(g, directed=False)
    comps = {}
    for t, l in zip(keep.tolist(), lab.tolist()):
        comps.setdefault(l, []).append(t)
    return sorted((np.asarray(v) for v in comps.values()), key=lambda a: a[0])


def check_bandwidth_schedule(h_of_n, m, c=2.0, n_grid=None):
    """Numerically check the four bandwidth-regularity conditions on a grid.

    Limits are read as monotone trends over ``n_grid``: h decreasing, and
    n h^m / |log h| and |log h| / log log n increasing; the doubling
    condition h_n^m <= c h_(2n)^m is checked pointwise.
    """
    if n_grid is None:
        n_grid = np.unique(np.logspace(2, 8, 25).astype(np.int64))
    n_grid = np.asarray(n_grid, dtype=np.int64)
    h = np.array([float(h_of_n(int(n))) for n in n_grid])
    h2 = np.array([float(h_of_n(int(2 * n))) for n in n_grid])
    lh = np.abs(np.log(h))
    a = n_grid * h**m / lh
    b = lh / np.log(np.log(n_grid))
    return {
        "h_decreasing": bool(np.all(np.diff(h) < 0) and np.all(h > 0)),
        "nh_over_log_increasing": bool(np.all(np.diff(a) > 0)),
        "log_over_loglog_increasing": bool(np.all(np.diff(b) > 0)),
        "doubling": bool(np.all(h**m <= c * h2**m)),
    }
