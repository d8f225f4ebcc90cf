"""Text formats for point clouds and dendrograms (17 significant digits)."""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgument
from .rsl import Dendrogram

POINTS_MAGIC = "# rslmanifold-points v1"


def fmt(x: float) -> str:
    """Shortest text that round-trips at 17 significant digits."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


def write_points(path, observed, latent=None, origin=None, fingerprint="none"):
    """Header line, then per point: D coordinates[, D latent coordinates], origin tag."""
    X = np.atleast_2d(np.asarray(observed, dtype=float))
    n, D = X.shape
    has_latent = latent is not None
    origin = np.zeros(n, dtype=np.int64) if origin is None else np.asarray(origin)
    with open(path, "w") as fh:
        fh.write(f"{POINTS_MAGIC} fingerprint={fingerprint} n={n} D={D} latent={int(has_latent)}\n")
        for t in range(n):
            cols = [fmt(v) for v in X[t]]
            if has_latent:
                cols += [fmt(v) for v in latent[t]]
            cols.append(str(int(origin[t])))
            fh.write(",".join(cols) + "\n")


def _parse_header(line):
    if not line.startswith(POINTS_MAGIC):
        raise InvalidArgument("not a point-cloud file (bad header)")
    fields = dict(tok.split("=", 1) for tok in line[len(POINTS_MAGIC):].split())
    return fields


def read_points(path):
    """Return (observed, latent or None, origin, fingerprint).

    Files without the header are read as bare comma-separated coordinates.
    """
    with open(path) as fh:
        first = fh.readline()
        rest = fh.read()
    if not first.startswith("#"):
        data = np.loadtxt([first] + rest.splitlines(), delimiter=",", ndmin=2)
        return data, None, np.zeros(data.shape[0], dtype=np.int64), "none"
    hdr = _parse_header(first.rstrip("\n"))
    n, D, has_latent = int(hdr["n"]), int(hdr["D"]), hdr.get("latent") == "1"
    if n == 0:
        return np.empty((0, D)), None, np.empty(0, np.int64), hdr.get("fingerprint")
    rows = [ln.split(",") for ln in rest.splitlines() if ln.strip()]
    if len(rows) != n:
        raise InvalidArgument(f"header says n={n}, found {len(rows)} rows")
    obs = np.array([[float(v) for v in r[:D]] for r in rows])
    lat = np.array([[float(v) for v in r[D:2 * D]] for r in rows]) if has_latent else None
    origin = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return obs, lat, origin, hdr.get("fingerprint")


def write_dendrogram(path, den: Dendrogram):
    act = den.activation
    order = np.lexsort((np.arange(act.size), act))
    with open(path, "w") as fh:
        fh.write(f"n {den.n}\n")
        fh.write(f"h {fmt(den.horizon)}\n")
        if den.rule:
            fh.write(f"rule {den.rule}\n")
        for i in order:
            fh.write(f"A {int(i)} {fmt(act[i])}\n")
        for r, a, b in den.merges:
            fh.write(f"M {fmt(r)} {a} {b}\n")


def read_dendrogram(path) -> Dendrogram:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines or lines[0][0] != "n":
        raise InvalidArgument("not a dendrogram file")
    n = int(lines[0][1])
    act = np.full(n, math.inf)
    mr, ma, mb = [], [], []
    horizon, rule = math.inf, ""
    for tok in lines[1:]:
        if tok[0] == "h":
            horizon = float(tok[1])
        elif tok[0] == "rule":
            rule = " ".join(tok[1:])
        elif tok[0] == "A":
            act[int(tok[1])] = float(tok[2])
        elif tok[0] == "M":
            mr.append(float(tok[1]))
            ma.append(int(tok[2]))
            mb.append(int(tok[3]))
        else:
            raise InvalidArgument(f"unknown dendrogram record {tok[0]!r}")
    return Dendrogram(act, np.asarray(mr, float), np.asarray(ma, np.int64),
                      np.asarray(mb, np.int64), horizon=horizon, rule=rule)


def write_partition(path, comps):
    """One component per line: 'C <min index> <members...>'."""
    with open(path, "w") as fh:
        for c in comps:
            fh.write("C " + str(int(c[0])) + " " + " ".join(str(int(i)) for i in c) + "\n")
