"""Exact k-NN radii and fixed-radius neighbor queries.

Both search modes only *propose* candidate pairs; every reported distance is
recomputed with :func:`pair_distances`, so the brute-force and grid paths
return bit-identical radii and identical neighbor sets.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgument

__all__ = [
    "DistanceIndex",
    "pair_distances",
    "knn_radius",
    "radius_neighbors",
    "radius_edges",
]

BRUTE_MAX_N = 2_000
_REL = 1e-12
GRID_DIMS = 3
_CHUNK_ELEMS = 4_000_000


def pair_distances(X, Y, i, j):
    """Euclidean distances between X[i] and Y[j], one fixed evaluation order."""
    diff = np.ascontiguousarray(X[i] - Y[j])
    return np.sqrt(np.sum(diff * diff, axis=1))


class DistanceIndex:
    """Distance queries over a fixed point cloud.

    mode is ``"brute"``, ``"grid"``, ``"kdtree"`` or ``"auto"`` (brute below
    2,000 points, kdtree above).  The grid hashes the first three coordinates
    only; projected distances never exceed true ones, so the projected cell
    search is a valid superset.  The kd-tree proposes candidates with a
    relative slack of 1e-12 around its own distance arithmetic.
    """

    def __init__(self, points, mode="auto", cell_size=None):
        X = np.ascontiguousarray(np.asarray(points, dtype=float))
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise InvalidArgument("points must be a nonempty (n, D) array")
        if mode == "auto":
            mode = "brute" if X.shape[0] < BRUTE_MAX_N else "kdtree"
        if mode not in ("brute", "grid", "kdtree"):
            raise InvalidArgument(f"unknown mode {mode!r}")
        self.points = X
        self.mode = mode
        self.cell_size = cell_size
        self._centered = X - X.mean(axis=0)
        self._sq = np.sum(self._centered**2, axis=1)
        self._margin = 1e-9 * max(float(self._sq.max()), 1e-300)
        self._tree = cKDTree(X) if mode == "kdtree" else None

    @property
    def n(self):
        return self.points.shape[0]

    # -- candidate generation -------------------------------------------

    def _rows_per_chunk(self):
        return max(1, _CHUNK_ELEMS // max(self.n, 1))

    def _brute_candidates(self, Qc, qsq, h):
        """Pairs (q, j) whose Gram-estimated distance might be <= h."""
        approx = qsq[:, None] + self._sq[None, :] - 2.0 * (Qc @ self._centered.T)
        margin = max(self._margin, 1e-9 * float(qsq.max(initial=0.0)))
        return np.nonzero(approx <= h * h + 2.0 * margin)

    def _grid_candidates(self, Q, h, limit=8_000_000):
        """Cell-neighbour pairs, or None when the grid is unusable or too dense."""
        m = min(GRID_DIMS, self.points.shape[1])
        size = h if self.cell_size is None else max(h, self.cell_size)
        size = max(size, 1e-12)
        origin = np.minimum(self.points[:, :m].min(axis=0), Q[:, :m].min(axis=0))
        pc = np.floor((self.points[:, :m] - origin) / size).astype(np.int64)
        qc = np.floor((Q[:, :m] - origin) / size).astype(np.int64)
        ext = np.maximum(pc.max(axis=0), qc.max(axis=0)) + 3
        if float(np.prod(ext.astype(float))) > 2.0**62:
            return None
        strides = np.cumprod(np.concatenate([[1], ext[:-1]])).astype(np.int64)
        pkey = (pc + 1) @ strides
        order = np.argsort(pkey, kind="stable")
        skey = pkey[order]
        qkey = (qc + 1) @ strides
        spans = []
        for off in itertools.product((-1, 0, 1), repeat=m):
            key = qkey + np.asarray(off, dtype=np.int64) @ strides
            lo = np.searchsorted(skey, key, "left")
            hi = np.searchsorted(skey, key, "right")
            spans.append((lo, hi - lo))
        total = sum(int(c.sum()) for _, c in spans)
        if total > limit and Q.shape[0] > 1:
            return "split"
        qi_all, pj_all = [], []
        for lo, cnt in spans:
            tot = int(cnt.sum())
            if tot == 0:
                continue
            qi = np.repeat(np.arange(Q.shape[0]), cnt)
            start = np.repeat(lo - np.cumsum(cnt) + cnt, cnt)
            qi_all.append(qi)
            pj_all.append(order[np.arange(tot) + start])
        if not qi_all:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        return np.concatenate(qi_all), np.concatenate(pj_all)

    def _tree_candidates(self, Q, h):
        lists = self._tree.query_ball_point(Q, h * (1 + _REL) + 1e-300)
        cnt = np.fromiter((len(a) for a in lists), dtype=np.int64, count=len(lists))
        qi = np.repeat(np.arange(Q.shape[0]), cnt)
        if cnt.sum() == 0:
            return qi, np.empty(0, np.int64)
        return qi, np.concatenate([np.asarray(a, dtype=np.int64) for a in lists])

    def _pairs_within(self, Q, h):
        """All (q, j, dist) with exact dist(Q[q], X[j]) <= h, sorted by (q, j)."""
        Q = np.ascontiguousarray(np.asarray(Q, dtype=float))
        mean = self.points.mean(axis=0)
        out_q, out_j, out_d = [], [], []
        pending = []
        step = 2048 if self.mode == "grid" else self._rows_per_chunk()
        for s in range(0, Q.shape[0], step):
            pending.append((s, min(s + step, Q.shape[0])))
        while pending:
            s, e = pending.pop(0)
            Qs = Q[s:e]
            if self.mode == "grid":
                cand = self._grid_candidates(Qs, h)
            elif self.mode == "kdtree":
                cand = self._tree_candidates(Qs, h)
            else:
                cand = None
            if isinstance(cand, str):
                mid = (s + e) // 2
                pending[:0] = [(s, mid), (mid, e)]
                continue
            if cand is None:
                Qc = Qs - mean
                cand = self._brute_candidates(Qc, np.sum(Qc**2, axis=1), h)
            qi, pj = cand
            dist = pair_distances(Qs, self.points, qi, pj)
            keep = dist <= h
            out_q.append(qi[keep] + s)
            out_j.append(pj[keep])
            out_d.append(dist[keep])
        q = np.concatenate(out_q) if out_q else np.empty(0, np.int64)
        j = np.concatenate(out_j) if out_j else np.empty(0, np.int64)
        dd = np.concatenate(out_d) if out_d else np.empty(0)
        order = np.lexsort((j, q))
        return q[order], j[order], dd[order]

    # -- public queries ---------------------------------------------------

    def count_within(self, centers, h):
        """Number of indexed points within closed distance h of each center."""
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if self.mode == "kdtree":
            inner = self._tree.query_ball_point(centers, h * (1 - _REL), return_length=True)
            outer = self._tree.query_ball_point(
                centers, h * (1 + _REL) + 1e-300, return_length=True
            )
            out = np.asarray(inner, dtype=np.int64)
            amb = np.nonzero(np.asarray(outer) != out)[0]
            if amb.size:
                q, _, _ = self._pairs_within(centers[amb], h)
                out[amb] = np.bincount(q, minlength=amb.size)
            return out
        q, _, _ = self._pairs_within(centers, h)
        return np.bincount(q, minlength=centers.shape[0])

    def radius_edges(self, R):
        """Edges (i, j, dist) with i < j and dist <= R."""
        if R < 0:
            raise InvalidArgument("R must be nonnegative")
        if self.mode == "kdtree":
            pairs = self._tree.query_pairs(R * (1 + _REL) + 1e-300, output_type="ndarray")
            i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
            dist = pair_distances(self.points, self.points, i, j)
            keep = dist <= R
            i, j, dist = i[keep], j[keep], dist[keep]
            order = np.lexsort((j, i))
            return i[order], j[order], dist[order]
        q, j, dd = self._pairs_within(self.points, R)
        keep = q < j
        return q[keep], j[keep], dd[keep]

    def knn_radius(self, k):
        """Distance to the k-th nearest sample point, the point itself first."""
        n = self.n
        if int(k) != k or k < 1:
            raise InvalidArgument("k must be a positive integer")
        if k > n:
            raise InvalidArgument(f"k={k} exceeds the number of points n={n}")
        k = int(k)
        if k == 1:
            return np.zeros(n)
        if self.mode == "grid":
            return self._knn_grid(k)
        if self.mode == "kdtree":
            return self._knn_tree(k)
        return self._knn_brute(k)

    def _kth_from_pairs(self, rows, qi, dist, k):
        order = np.lexsort((dist, qi))
        qs, ds = qi[order], dist[order]
        starts = np.searchsorted(qs, np.arange(rows))
        counts = np.bincount(qs, minlength=rows)
        ok = counts >= k
        out = np.full(rows, np.nan)
        out[ok] = ds[starts[ok] + k - 1]
        return out

    def _knn_brute(self, k):
        n = self.n
        out = np.empty(n)
        step = self._rows_per_chunk()
        for s in range(0, n, step):
            Qc = self._centered[s : s + step]
            approx = self._sq[s : s + step, None] + self._sq[None, :] - 2.0 * (Qc @ self._centered.T)
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            qi, pj = np.nonzero(approx <= kth[:, None] + 4.0 * self._margin)
            dist = pair_distances(self.points[s : s + step], self.points, qi, pj)
            out[s : s + step] = self._kth_from_pairs(Qc.shape[0], qi, dist, k)
        return out

    def _knn_tree(self, k):
        n = self.n
        X = self.points
        extra = min(8, n - k)
        out = np.empty(n)
        step = max(1, 2_000_000 // (k + extra))
        for s in range(0, n, step):
            Xs = X[s : s + step]
            td, ti = self._tree.query(Xs, k + extra)
            td = td.reshape(Xs.shape[0], -1)
            ti = ti.reshape(Xs.shape[0], -1)
            rows = np.repeat(np.arange(Xs.shape[0]), ti.shape[1])
            exact = pair_distances(Xs, X, rows, ti.ravel()).reshape(ti.shape)
            out[s : s + step] = np.partition(exact, k - 1, axis=1)[:, k - 1]
            if extra < n - k:
                # a tie band at the k-th tree distance could hide closer points
                unsafe = td[:, -1] <= td[:, k - 1] * (1 + 4 * _REL) + 1e-300
            else:
                unsafe = np.zeros(Xs.shape[0], bool)
            if unsafe.any():
                idx = np.nonzero(unsafe)[0]
                q, _, dd = self._pairs_within(Xs[idx], float(td[idx, -1].max()))
                out[s + idx] = self._kth_from_pairs(idx.size, q, dd, k)
        return out

    def _knn_grid(self, k):
        n = self.n
        X = self.points
        probe = np.linspace(0, n - 1, num=min(n, 64)).astype(np.int64)
        diff = X[probe][:, None, :] - X[None, :, :] if n * X.shape[1] * probe.size < 4e7 else None
        if diff is not None:
            pd = np.sqrt(np.sum(diff * diff, axis=2))
            h = float(np.median(np.partition(pd, k - 1, axis=1)[:, k - 1]))
        else:
            h = float(np.max(np.ptp(X, axis=0))) * (k / n) ** (1.0 / min(GRID_DIMS, X.shape[1]))
        h = max(h, 1e-12)
        out = np.full(n, np.nan)
        todo = np.arange(n)
        while todo.size:
            q, _, dd = self._pairs_within(X[todo], h)
            kth = self._kth_from_pairs(todo.size, q, dd, k)
            done = ~np.isnan(kth)
            out[todo[done]] = kth[done]
            todo = todo[~done]
            h *= 2.0
        return out


def knn_radius(index: DistanceIndex, k: int):
    return index.knn_radius(k)


def radius_edges(index: DistanceIndex, R: float):
    return index.radius_edges(R)


def radius_neighbors(index: DistanceIndex, R: float):
    """Adjacency list: for each point the sorted indices within distance R."""
    i, j, _ = index.radius_edges(R)
    a = np.concatenate([i, j])
    b = np.concatenate([j, i])
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    bounds = np.searchsorted(a, np.arange(index.n + 1))
    return [b[bounds[t] : bounds[t + 1]] for t in range(index.n)]
