"""Robust single linkage sweeps and their dendrograms.

A sweep assigns every point an activation radius and every candidate edge an
activation radius; components at sweep value r are the connected pieces of
the graph of everything activated at or below r.  Edges are processed in
(radius, i, j) order, so the merge list is deterministic and component labels
are always the smallest member index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree

from .errors import InvalidArgument
from .geometry import SphereSpec, cap_volume, unit_ball_volume
from .neighbors import DistanceIndex, pair_distances

__all__ = [
    "FixedR",
    "Proportional",
    "RSLConfig",
    "Dendrogram",
    "SphereVBall",
    "PiecewiseVBall",
    "rsl_sweep",
    "sweep_from_activation",
    "adaptive_activation",
    "adaptive_rsl",
    "vball_radius",
    "components_at",
]


@dataclass(frozen=True)
class FixedR:
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise InvalidArgument("R must be positive")

    def describe(self):
        return f"R={self.R!r}"


@dataclass(frozen=True)
class Proportional:
    c: float = 4.0

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidArgument("c must be positive")

    def describe(self):
        return f"R={self.c!r}*r"


@dataclass(frozen=True)
class RSLConfig:
    k: int
    rule: FixedR | Proportional = field(default_factory=Proportional)
    oracle: object = None

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidArgument("k must be a positive integer")


class _UnionFind:
    def __init__(self, parent):
        self.parent = parent

    def find(self, i):
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, i, j):
        a, b = self.find(i), self.find(j)
        if a == b:
            return None
        lo, hi = (a, b) if a < b else (b, a)
        self.parent[hi] = lo
        return lo, hi


def _flatten(parent):
    lab = parent.copy()
    while True:
        nxt = lab[lab]
        if np.array_equal(nxt, lab):
            return lab
        lab = nxt


@dataclass
class Dendrogram:
    """Activation radii plus the ordered merge events of one sweep.

    ``horizon`` bounds the events that were computed: queries above it raise.
    """

    activation: np.ndarray
    merge_radius: np.ndarray
    merge_a: np.ndarray
    merge_b: np.ndarray
    horizon: float = math.inf
    rule: str = ""
    _checkpoints: list = field(default_factory=list, repr=False)
    _stride: int = field(default=1, repr=False)

    def __post_init__(self):
        self.activation = np.asarray(self.activation, dtype=float)
        m = len(self.merge_radius)
        self._stride = max(1, int(math.isqrt(max(m, 1))))
        parent = np.arange(self.n)
        uf = _UnionFind(parent)
        self._checkpoints = [parent.copy()]
        for e in range(m):
            uf.union(int(self.merge_a[e]), int(self.merge_b[e]))
            if (e + 1) % self._stride == 0:
                self._checkpoints.append(_flatten(parent))

    @property
    def n(self):
        return self.activation.shape[0]

    @property
    def merges(self):
        return list(zip(self.merge_radius.tolist(), self.merge_a.tolist(), self.merge_b.tolist()))

    def event_radii(self):
        """Sorted distinct finite activation and merge radii."""
        ev = np.concatenate([self.activation, self.merge_radius])
        ev = ev[np.isfinite(ev) & (ev <= self.horizon)]
        return np.unique(ev)

    def labels_at(self, r):
        """Minimum-index component label per point; -1 for inactive points."""
        if r < 0:
            raise InvalidArgument("r must be nonnegative")
        if r > self.horizon:
            raise InvalidArgument(f"r={r} beyond the computed horizon {self.horizon}")
        upto = int(np.searchsorted(self.merge_radius, r, side="right"))
        c = upto // self._stride
        parent = self._checkpoints[c].copy()
        uf = _UnionFind(parent)
        for e in range(c * self._stride, upto):
            uf.union(int(self.merge_a[e]), int(self.merge_b[e]))
        lab = _flatten(parent)
        lab[self.activation > r] = -1
        return lab

    def components_at(self, r):
        """Partition of active points at r, as sorted index arrays ordered by minimum."""
        lab = self.labels_at(r)
        idx = np.nonzero(lab >= 0)[0]
        if idx.size == 0:
            return []
        order = np.lexsort((idx, lab[idx]))
        idx = idx[order]
        cuts = np.nonzero(np.diff(lab[idx]))[0] + 1
        return np.split(idx, cuts)


def components_at(dendrogram: Dendrogram, r: float):
    return dendrogram.components_at(r)


def reach_radius(dist, c):
    """Smallest float r with fl(c * r) >= dist, i.e. the first sweep value
    at which an edge of length ``dist`` is within R = c r."""
    dist = np.asarray(dist, dtype=float)
    w = dist / c
    for _ in range(4):
        up = c * w < dist
        w = np.where(up, np.nextafter(w, np.inf), w)
        prev = np.nextafter(w, -np.inf)
        down = (c * prev >= dist) & (prev >= 0)
        w = np.where(down, prev, w)
        if not (up.any() or down.any()):
            break
    return w


def _kruskal(n, i, j, w):
    """Merge events from edges (i, j, w) in (w, i, j) order."""
    if i.size == 0:
        return np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64)
    order = np.lexsort((j, i, w))
    i, j, w = i[order], j[order], w[order]
    ranks = np.arange(1, i.size + 1, dtype=float)
    g = coo_matrix((ranks, (i, j)), shape=(n, n)).tocsr()
    t = minimum_spanning_tree(g).tocoo()
    sel = np.sort(t.data.astype(np.int64) - 1)
    i, j, w = i[sel], j[sel], w[sel]
    parent = np.arange(n)
    uf = _UnionFind(parent)
    ra, rb, rr = [], [], []
    for a, b, x in zip(i.tolist(), j.tolist(), w.tolist()):
        res = uf.union(a, b)
        if res is not None:
            ra.append(res[0])
            rb.append(res[1])
            rr.append(x)
    return np.asarray(rr, float), np.asarray(ra, np.int64), np.asarray(rb, np.int64)


def _dense_prim(X, act, c):
    """Exact minimum spanning forest of max(a_i, a_j, d_ij / c) over finite points."""
    idx = np.nonzero(np.isfinite(act))[0]
    m = idx.size
    if m < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    P = X[idx]
    a = act[idx]
    best = np.full(m, np.inf)
    src = np.full(m, -1)
    done = np.zeros(m, bool)
    cur = 0
    ei, ej, ew = [], [], []
    ar = np.arange(m)
    for _ in range(m - 1):
        done[cur] = True
        dist = pair_distances(P, P, np.full(m, cur), ar)
        w = np.maximum(np.maximum(a, a[cur]), reach_radius(dist, c))
        upd = (~done) & (w < best)
        best[upd] = w[upd]
        src[upd] = cur
        cand = np.where(done, np.inf, best)
        nxt = int(np.argmin(cand))
        ei.append(src[nxt])
        ej.append(nxt)
        ew.append(best[nxt])
        cur = nxt
    ei, ej = idx[np.asarray(ei)], idx[np.asarray(ej)]
    lo, hi = np.minimum(ei, ej), np.maximum(ei, ej)
    return lo, hi, np.asarray(ew)


def sweep_from_activation(points, activation, rule, horizon=math.inf, mode="auto"):
    """Dendrogram for given activation radii under a connection rule.

    With a finite ``horizon`` only events at or below it are computed, which
    keeps the candidate edge set sparse.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    act = np.asarray(activation, dtype=float)
    n = X.shape[0]
    live = np.nonzero(act <= horizon)[0]
    if isinstance(rule, Proportional) and not math.isfinite(horizon):
        i, j, w = _dense_prim(X, act, rule.c)
    else:
        reach = rule.R if isinstance(rule, FixedR) else rule.c * horizon
        if live.size >= 2:
            sub = DistanceIndex(X[live], mode=mode)
            si, sj, dd = sub.radius_edges(reach)
            i, j = live[si], live[sj]
        else:
            i = j = np.empty(0, np.int64)
            dd = np.empty(0)
        w = np.maximum(act[i], act[j])
        if isinstance(rule, Proportional):
            w = np.maximum(w, reach_radius(dd, rule.c))
        keep = w <= horizon
        i, j, w = i[keep], j[keep], w[keep]
    rr, ra, rb = _kruskal(n, i, j, w)
    return Dendrogram(act, rr, ra, rb, horizon=horizon, rule=rule.describe())


def rsl_sweep(points, config: RSLConfig, horizon=math.inf, mode="auto", index=None):
    """RSL dendrogram: point i activates at its k-NN radius (self counted)."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if config.k > X.shape[0]:
        raise InvalidArgument(f"k={config.k} exceeds n={X.shape[0]}")
    index = DistanceIndex(X, mode=mode) if index is None else index
    act = index.knn_radius(config.k)
    return sweep_from_activation(X, act, config.rule, horizon, mode)


def vball_radius(sphere: SphereSpec, x, V, iters=200):
    """Chord radius r_x with cap volume V around surface point(s) x.

    Monotone bisection on cap_volume; the sphere is homogeneous so the
    answer does not depend on x beyond the on-surface check.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(sphere.on_surface(x, 1e-6)):
        raise InvalidArgument("vball_radius needs points on the sphere")
    V = np.broadcast_to(np.asarray(V, dtype=float), (x.shape[0],)).copy()
    full = sphere.volume
    if np.any(V < 0) or np.any(V > full * (1 + 1e-12)):
        raise InvalidArgument("V must lie in [0, surface volume]")
    lo = np.zeros_like(V)
    hi = np.full_like(V, 2.0 * sphere.tau)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        big = cap_volume(sphere.d, sphere.tau, mid) >= V
        hi = np.where(big, mid, hi)
        lo = np.where(big, lo, mid)
        if np.all(hi - lo <= 0.5 * np.spacing(hi)):
            break
    out = hi
    out[V == 0] = 0.0
    return out


@dataclass(frozen=True)
class SphereVBall:
    """V-ball oracle for data on one known sphere."""

    sphere: SphereSpec

    def volume(self, x, r):
        r = np.asarray(r, dtype=float)
        return np.where(r > 2 * self.sphere.tau, self.sphere.volume,
                        cap_volume(self.sphere.d, self.sphere.tau, np.minimum(r, 2 * self.sphere.tau)))

    def max_volume(self, x):
        return np.full(np.atleast_2d(x).shape[0], self.sphere.volume)

    def radius(self, x, V):
        return vball_radius(self.sphere, x, V)

    def check(self, x, tol=1e-6):
        if not np.all(self.sphere.on_surface(x, tol)):
            raise InvalidArgument("adaptive mode needs every point on the known sphere")


@dataclass(frozen=True)
class PiecewiseVBall:
    """V-ball oracle on a union of sphere pieces; each point uses the sphere it lies on."""

    spheres: tuple

    def assign(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dist = np.stack([s.distance_to_surface(x) / s.tau for s in self.spheres], axis=1)
        return np.argmin(dist, axis=1), dist.min(axis=1)

    def volume(self, x, r):
        which, _ = self.assign(x)
        r = np.broadcast_to(np.asarray(r, dtype=float), which.shape)
        out = np.empty(which.shape)
        for s_id, s in enumerate(self.spheres):
            m = which == s_id
            rr = r[m]
            out[m] = np.where(rr > 2 * s.tau, s.volume, cap_volume(s.d, s.tau, np.minimum(rr, 2 * s.tau)))
        return out

    def max_volume(self, x):
        which, _ = self.assign(x)
        return np.array([s.volume for s in self.spheres])[which]

    def radius(self, x, V):
        which, _ = self.assign(x)
        V = np.broadcast_to(np.asarray(V, dtype=float), which.shape)
        out = np.empty(which.shape)
        for s_id, s in enumerate(self.spheres):
            m = which == s_id
            if m.any():
                out[m] = vball_radius(s, np.atleast_2d(x)[m], V[m])
        return out

    def check(self, x, tol=1e-6):
        _, dist = self.assign(x)
        if np.any(dist > tol):
            raise InvalidArgument("adaptive mode needs every point on a known sphere piece")


def adaptive_activation(points, rk, oracle, d, iters=200):
    """Smallest r with r_k(X_i) <= r_{X_i}, r_{X_i} the V-ball radius for V = v_d r^d.

    Because cap volume is increasing in the radius, the test
    r_k <= radius(x, V) is evaluated as volume(x, r_k) <= V.  Points whose
    k-NN ball exceeds their whole sphere never activate (radius inf).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    vd = unit_ball_volume(d)
    need = oracle.volume(X, rk)
    full = oracle.max_volume(X)
    never = need > full * (1 + 1e-12)
    hi = (full / vd) ** (1.0 / d)
    lo = np.zeros_like(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = need <= vd * mid**d
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo <= 0.5 * np.spacing(hi)):
            break
    out = hi.copy()
    out[need <= 0] = 0.0
    out[never] = math.inf
    return out


def adaptive_rsl(points, config: RSLConfig, oracle=None, horizon=math.inf, mode="auto", sphere=None):
    """Spatially adaptive RSL with a V-ball oracle for a known manifold.

    ``oracle`` defaults to ``config.oracle``; passing ``sphere`` wraps it in
    a :class:`SphereVBall`.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if sphere is not None:
        oracle = SphereVBall(sphere)
    oracle = config.oracle if oracle is None else oracle
    if oracle is None:
        raise InvalidArgument("adaptive mode needs a V-ball oracle")
    oracle.check(X)
    if config.k > X.shape[0]:
        raise InvalidArgument(f"k={config.k} exceeds n={X.shape[0]}")
    d = oracle.sphere.d if isinstance(oracle, SphereVBall) else oracle.spheres[0].d
    rk = DistanceIndex(X, mode=mode).knn_radius(config.k)
    act = adaptive_activation(X, rk, oracle, d)
    return sweep_from_activation(X, act, config.rule, horizon, mode)
