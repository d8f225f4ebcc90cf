"""Consistency verdicts, uniform-convergence checks and experiment sweeps."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import InvalidArgument
from .geometry import SphereSpec
from .neighbors import DistanceIndex
from .params import (
    SalienceParams,
    c_delta,
    choose_k,
    choose_r,
    connection_radius,
    mu,
    rho,
    theta_gate,
)
from .rsl import (
    FixedR,
    PiecewiseVBall,
    Proportional,
    SphereVBall,
    adaptive_activation,
    sweep_from_activation,
)
from .samplers import (
    CLUTTER_TAG,
    Additive,
    Clutter,
    LowerBoundInstance,
    NoNoise,
    SphereMixture,
    UniformSphere,
    ball_masses,
    sample,
)
from .seeding import trial_seed

__all__ = [
    "HalfSpace",
    "CapRegion",
    "ClusterPair",
    "TrialRecord",
    "CellSummary",
    "EvaluationReport",
    "Cell",
    "check_consistency",
    "scan_consistency",
    "verify_uniform_convergence",
    "lower_bound_pair",
    "mixture_clusters",
    "theorem_setup",
    "build_model",
    "noise_for_cell",
    "run_trial",
    "experiment_sweep",
]


# ---------------------------------------------------------------- clusters


@dataclass(frozen=True)
class HalfSpace:
    """Latent points with sign * x[axis] >= threshold and origin tag in ``tags``."""

    axis: int
    threshold: float
    sign: float = 1.0
    tags: tuple | None = None

    def __call__(self, latent, origin):
        m = self.sign * latent[:, self.axis] >= self.threshold
        if self.tags is not None:
            m &= np.isin(origin, self.tags)
        return m


@dataclass(frozen=True)
class Band:
    """Latent points with |x[axis]| <= half_width and origin tag in ``tags``."""

    axis: int
    half_width: float
    tags: tuple | None = None

    def __call__(self, latent, origin):
        m = np.abs(latent[:, self.axis]) <= self.half_width
        if self.tags is not None:
            m &= np.isin(origin, self.tags)
        return m


@dataclass(frozen=True)
class CapRegion:
    """Latent points within chord distance ``radius`` of ``center``, not clutter."""

    center: tuple
    radius: float

    def __call__(self, latent, origin):
        c = np.asarray(self.center, dtype=float)
        return (np.linalg.norm(latent - c, axis=1) <= self.radius) & (origin != CLUTTER_TAG)


@dataclass(frozen=True)
class ClusterPair:
    """Ground-truth clusters (two or more) with their separation certificate.

    Membership is decided on latent points, so clutter and additive noise
    never move a point between clusters.  ``separator`` optionally marks the
    sample points of the separator neighbourhood.
    """

    regions: tuple
    sigma: float
    epsilon: float
    separator_desc: str = ""
    separator: object = None

    def members(self, smp):
        return [np.nonzero(reg(smp.latent, smp.origin))[0] for reg in self.regions]


def lower_bound_pair(model: LowerBoundInstance, sigma: float) -> ClusterPair:
    """A = {x1 >= 1/2 + sigma} and A' = {x1 <= -1/2 - sigma} on C; S = {x1 = 0}."""
    ctags = (0, 1, 2, 3, 4)
    A = HalfSpace(0, 0.5 + sigma, 1.0, ctags)
    Ap = HalfSpace(0, 0.5 + sigma, -1.0, ctags)
    sep = Band(0, max(0.5 - sigma, 0.0), ctags)
    return ClusterPair((A, Ap), sigma, model.epsilon, "x1 = 0", sep)


def mixture_clusters(model: SphereMixture, sigma: float, epsilon: float) -> ClusterPair:
    """One cluster per bump: the bump cap shrunk by sigma (chord)."""
    rad = max(model.bump_radius - sigma, 0.0)
    regs = tuple(CapRegion(tuple(c), rad) for c in model.centers)
    return ClusterPair(regs, sigma, epsilon, "complement of the bump caps")


# ---------------------------------------------------------------- verdicts


@dataclass
class TrialRecord:
    cell: int
    trial: int
    seed: int
    n: int
    d: int
    D: int
    epsilon: float
    regime: str
    k: int
    rule: str
    r: float
    status: str
    connected_A: bool
    connected_Aprime: bool
    separated: bool
    success: bool
    n_connected: int = 0
    n_clusters: int = 0
    clutter_active: int = 0
    separator_active: int = 0
    reason: str = ""


def _verdict_at(labels, clusters):
    conn = []
    owners = []
    for c in clusters:
        lab = labels[c]
        ok = bool(lab.size and np.all(lab >= 0) and np.all(lab == lab[0]))
        conn.append(ok)
        owners.append(set(lab[lab >= 0].tolist()))
    sep = True
    for a in range(len(owners)):
        for b in range(a + 1, len(owners)):
            if owners[a] & owners[b]:
                sep = False
    return conn, sep


def check_consistency(dendrogram, smp, pair: ClusterPair, r: float):
    """Verdict at sweep value r: connected flags, separation, success.

    Returns a dict; ``vacuous`` is set when some cluster has no sample points
    or no point of a cluster is active at r.
    """
    clusters = pair.members(smp)
    labels = dendrogram.labels_at(r)
    out = {"r": float(r), "n_clusters": len(clusters)}
    empty = any(c.size == 0 for c in clusters)
    conn, sep = _verdict_at(labels, clusters)
    none_active = any(c.size and np.all(labels[c] < 0) for c in clusters)
    out["vacuous"] = bool(empty or none_active)
    out["connected"] = conn
    out["separated"] = sep
    out["success"] = bool(not empty and all(conn) and sep)
    out["clutter_active"] = int(np.sum((smp.origin == CLUTTER_TAG) & (labels >= 0)))
    if pair.separator is not None:
        s = pair.separator(smp.latent, smp.origin)
        out["separator_active"] = int(np.sum(s & (labels >= 0)))
    else:
        out["separator_active"] = 0
    return out


def scan_consistency(dendrogram, clusters):
    """Success interval [r_conn, r_merge) from one replay of the merges.

    r_conn is the first sweep value at which every cluster lies inside one
    component; r_merge the first at which two clusters share one.  Both are
    inf when not reached within the dendrogram's horizon.
    """
    n = dendrogram.n
    cid = np.full(n, -1)
    for j, c in enumerate(clusters):
        cid[c] = j
    sizes = [int(c.size) for c in clusters]
    conn_time = [math.inf] * len(clusters)
    for j, c in enumerate(clusters):
        if c.size == 1:
            conn_time[j] = float(dendrogram.activation[c[0]])
    parent = np.arange(n)
    counts = {i: {int(cid[i]): 1} for i in np.nonzero(cid >= 0)[0].tolist()}

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    r_merge = math.inf
    for t, a, b in zip(dendrogram.merge_radius.tolist(), dendrogram.merge_a.tolist(),
                       dendrogram.merge_b.tolist()):
        ra, rb = find(a), find(b)
        lo, hi = min(ra, rb), max(ra, rb)
        parent[hi] = lo
        ca, cb = counts.pop(lo, {}), counts.pop(hi, {})
        if ca and cb and math.isinf(r_merge) and len(set(ca) | set(cb)) > 1:
            r_merge = t
        for j, v in cb.items():
            ca[j] = ca.get(j, 0) + v
        if ca:
            counts[lo] = ca
            for j, v in ca.items():
                if v == sizes[j] and math.isinf(conn_time[j]):
                    conn_time[j] = t
    r_conn = max(conn_time) if conn_time else math.inf
    return r_conn, r_merge, conn_time


# ---------------------------------------------------------------- Lemma-1 check


@dataclass(frozen=True)
class ConvergenceReport:
    balls: int
    violations: tuple
    premises: tuple
    two_sided_violations: int
    any_violation: bool
    monte_carlo: bool


def verify_uniform_convergence(smp, model, net, k, delta=0.05, C0=1.0, mu_value=None,
                               radii=None, seed=0):
    """Check the three ball implications on centres sample ∪ net over a radius grid.

    Implications: P >= C mu/n => P_n > 0; P >= k/n + C sqrt(k mu)/n =>
    P_n >= k/n; P <= k/n - C sqrt(k mu)/n => P_n < k/n, with C = C_delta.
    Also counts violations of P - P_n <= 2 sqrt((log 2n + log 4/delta)/n) sqrt(P).
    """
    X = smp.observed
    n = X.shape[0]
    if mu_value is None:
        raise InvalidArgument("mu must be supplied")
    if k < mu_value:
        raise InvalidArgument(f"the implications assume k >= mu ({k} < {mu_value:.4g})")
    cd = c_delta(delta, C0)
    centers = np.vstack([X, np.atleast_2d(net)]) if net is not None and len(net) else X
    if radii is None:
        radii = np.geomspace(0.02, 2.0, 16)
    idx = DistanceIndex(X)
    viol = [0, 0, 0]
    prem = [0, 0, 0]
    two = 0
    mc_any = False
    lo_k = k / n - cd * math.sqrt(k * mu_value) / n
    hi_k = k / n + cd * math.sqrt(k * mu_value) / n
    slack = 2 * math.sqrt((math.log(2 * n) + math.log(4 / delta)) / n)
    for j, r in enumerate(radii):
        P, _, mc = ball_masses(model, centers, float(r), seed=seed + j)
        mc_any |= bool(mc.any())
        Pn = idx.count_within(centers, float(r)) / n
        p1 = P >= cd * mu_value / n
        p2 = P >= hi_k
        p3 = P <= lo_k
        prem[0] += int(p1.sum())
        prem[1] += int(p2.sum())
        prem[2] += int(p3.sum())
        viol[0] += int(np.sum(p1 & ~(Pn > 0)))
        viol[1] += int(np.sum(p2 & ~(Pn >= k / n)))
        viol[2] += int(np.sum(p3 & ~(Pn < k / n)))
        two += int(np.sum(P - Pn > slack * np.sqrt(P)))
    return ConvergenceReport(centers.shape[0] * len(radii), tuple(viol), tuple(prem), two,
                             any(v > 0 for v in viol), mc_any)


# ---------------------------------------------------------------- experiments


@dataclass(frozen=True)
class Cell:
    """One grid cell of an experiment.

    ``k``: 'theorem' or an integer string.  ``R``: 'theorem', 'prop:<c>' or
    'fixed:<R>'.  ``verdict``: 'theorem' (r from the regime's r equation),
    'scan' (success if some sweep value works) or 'fixed:<r>'.  ``theta``:
    a number or 'gate/<m>' for theta_gate / m.
    """

    model: str = "lower_bound"
    n: int = 2000
    d: int = 2
    D: int | None = None
    epsilon: float = 0.4
    tau: float = 0.2
    sigma: float = 0.1
    regime: str = "noiseless"
    pi: float = 0.8
    theta: str = "0"
    k: str = "theorem"
    R: str = "theorem"
    verdict: str = "theorem"
    adaptive: bool = False
    delta: float = 0.05
    C0: float = 1.0
    n_bumps: int = 10
    bump_radius: float = 0.25
    bump_weight: float = 0.7
    model_seed: int = 0
    threshold: float | None = None
    label: str = ""

    def key(self):
        d = asdict(self)
        d.pop("label")
        d.pop("threshold")
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, raw):
        names = {f.name: f for f in fields(cls)}
        out = {}
        for kname, v in raw.items():
            if kname not in names:
                raise InvalidArgument(f"unknown cell field {kname!r}")
            out[kname] = _coerce(names[kname].type, v)
        return cls(**out)


def _coerce(typ, v):
    if not isinstance(v, str):
        return v
    t = str(typ)
    if v.lower() in ("none", ""):
        return None
    if t.startswith("int"):
        return int(v)
    if t.startswith("float"):
        return float(v)
    if t.startswith("bool"):
        return v.lower() in ("1", "true", "yes", "on")
    return v


def build_model(cell: Cell):
    if cell.model == "lower_bound":
        return LowerBoundInstance(cell.d, cell.tau, cell.epsilon, D=cell.D)
    if cell.model == "mixture":
        return SphereMixture.default(cell.d, cell.tau, cell.D, cell.n_bumps, cell.bump_radius,
                                     cell.bump_weight, cell.model_seed)
    if cell.model == "uniform":
        return UniformSphere(SphereSpec.standard(cell.d, cell.tau, cell.D))
    raise InvalidArgument(f"unknown model {cell.model!r}")


def model_level(model):
    """Cluster density level lambda of a model."""
    if isinstance(model, LowerBoundInstance):
        return model.lam
    if isinstance(model, SphereMixture):
        ps = model.pieces()
        return ps[0].density + ps[1].density
    return model.pieces()[0].density


@dataclass(frozen=True)
class TheoremSetup:
    params: SalienceParams
    rho: float
    rho_branch: str
    mu: float
    k: int
    r: float
    R: float
    theta: float
    feasible: bool
    reason: str


def theorem_setup(cell: Cell, model, k=None) -> TheoremSetup:
    """rho, mu, k, r, R and theta for a cell, with feasibility of the r equation."""
    # epsilon < 1/2 is enforced only when a theorem quantity is actually used
    strict = "theorem" in (cell.k, cell.R, cell.verdict)
    p = SalienceParams(cell.sigma, cell.epsilon, model_level(model), cell.tau, cell.d,
                       cell.delta, cell.C0, strict=strict)
    regime = cell.regime
    rr = rho(p, regime)
    m = mu(cell.n, rr.value, cell.d)
    kk = choose_k(p, m, regime) if k is None else int(k)
    ch = choose_r(p, kk, cell.n, m, regime, pi=cell.pi if regime == "clutter" else 1.0)
    if cell.adaptive:
        ru = ch.r * (1 + 6 * ch.r / cell.tau)
        R = connection_radius("4ru", r_u=ru)
    elif regime == "additive":
        R = connection_radius("5rho", rho_value=rr.value)
    else:
        R = connection_radius("4rho", rho_value=rr.value)
    theta = 0.0
    if regime == "additive":
        if cell.theta.startswith("gate/"):
            theta = theta_gate(p, rr.value) / float(cell.theta.split("/", 1)[1])
        else:
            theta = float(cell.theta)
    return TheoremSetup(p, rr.value, rr.branch, m, kk, ch.r, R, theta, ch.feasible, ch.reason)


def noise_for_cell(cell: Cell, model=None):
    """Noise model of a cell; theorem quantities are computed only for 'gate/<m>'."""
    if cell.regime == "additive" and cell.theta.startswith("gate/"):
        model = build_model(cell) if model is None else model
        return Additive(theorem_setup(cell, model).theta)
    if cell.regime == "additive":
        return Additive(float(cell.theta))
    return _noise_for(cell, None)


def _noise_for(cell, setup):
    if cell.regime == "clutter":
        return Clutter(cell.pi)
    if cell.regime == "additive":
        return Additive(setup.theta)
    return NoNoise()


def _clusters_for(cell, model):
    if isinstance(model, LowerBoundInstance):
        return lower_bound_pair(model, cell.sigma)
    if isinstance(model, SphereMixture):
        return mixture_clusters(model, cell.sigma, cell.epsilon)
    raise InvalidArgument("uniform model has no cluster pair")


def _oracle_for(model):
    if isinstance(model, LowerBoundInstance):
        return PiecewiseVBall(tuple(model.spheres()))
    return SphereVBall(model.sphere)


def _rule_for(cell, setup):
    if cell.R == "theorem":
        return FixedR(setup.R)
    kind, _, val = cell.R.partition(":")
    if kind == "prop":
        return Proportional(float(val))
    if kind == "fixed":
        return FixedR(float(val))
    raise InvalidArgument(f"bad connection rule {cell.R!r}")


def run_trial(cell: Cell, cell_index: int, trial: int, seed: int) -> TrialRecord:
    model = build_model(cell)
    k_in = None if cell.k == "theorem" else int(cell.k)
    setup = theorem_setup(cell, model, k_in)
    k = setup.k
    rule = _rule_for(cell, setup)
    base = dict(cell=cell_index, trial=trial, seed=seed, n=cell.n, d=cell.d,
                D=model.D, epsilon=cell.epsilon, regime=cell.regime, k=k,
                rule=rule.describe())
    fail = dict(connected_A=False, connected_Aprime=False, separated=False, success=False)
    if k > cell.n:
        return TrialRecord(**base, r=math.nan, status="skipped", **fail,
                           reason=f"k={k} exceeds n={cell.n}")
    if cell.verdict == "theorem" and not setup.feasible:
        return TrialRecord(**base, r=setup.r, status="skipped", **fail, reason=setup.reason)
    smp = sample(model, _noise_for(cell, setup), cell.n, seed)
    pair = _clusters_for(cell, model)
    clusters = pair.members(smp)
    if any(c.size == 0 for c in clusters):
        return TrialRecord(**base, r=math.nan, status="vacuous", **fail,
                           n_clusters=len(clusters), reason="empty cluster in sample")
    X = smp.observed
    rk = DistanceIndex(X).knn_radius(k)
    if cell.adaptive:
        act = adaptive_activation(smp.latent if cell.regime == "noiseless" else X, rk,
                                  _oracle_for(model), cell.d)
    else:
        act = rk
    if cell.verdict == "scan":
        r, r_merge, den = _scan(X, act, rule, clusters)
        ok = r < r_merge
        if math.isfinite(r):
            v = check_consistency(den, smp, pair, r)
        else:
            v = {"connected": [False] * len(clusters), "separated": math.isinf(r_merge),
                 "clutter_active": 0, "separator_active": 0}
        return _record(base, r, v, ok, len(clusters))
    r = setup.r if cell.verdict == "theorem" else float(cell.verdict.split(":", 1)[1])
    den = sweep_from_activation(X, act, rule, horizon=r)
    v = check_consistency(den, smp, pair, r)
    status = "vacuous" if v["vacuous"] else "ok"
    return _record(base, r, v, v["success"], len(clusters), status)


def _record(base, r, v, ok, m, status="ok"):
    conn = v["connected"]
    return TrialRecord(**base, r=float(r), status=status,
                       connected_A=bool(conn[0]), connected_Aprime=bool(all(conn[1:])),
                       separated=bool(v["separated"]), success=bool(ok),
                       n_connected=int(sum(conn)), n_clusters=m,
                       clutter_active=int(v["clutter_active"]),
                       separator_active=int(v["separator_active"]))


def _scan(X, act, rule, clusters):
    """Grow the dendrogram horizon until the scan verdict is decided."""
    members = np.concatenate(clusters)
    finite = act[np.isfinite(act)]
    top = float(finite.max()) if finite.size else 0.0
    h = float(np.max(act[members]))
    if not math.isfinite(h):
        return math.inf, 0.0, None
    while True:
        den = sweep_from_activation(X, act, rule, horizon=h)
        r_conn, r_merge, _ = scan_consistency(den, clusters)
        if r_merge <= h and r_merge <= r_conn:
            return r_conn, r_merge, den
        if r_conn <= h:
            return r_conn, r_merge, den
        complete = h >= top and (isinstance(rule, FixedR) or rule.c * h >= _diameter_bound(X))
        if complete:
            return r_conn, r_merge, den
        h *= 1.5


def _diameter_bound(X):
    lo, hi = X.min(axis=0), X.max(axis=0)
    return float(np.linalg.norm(hi - lo))


@dataclass
class CellSummary:
    cell: int
    label: str
    model: str
    n: int
    d: int
    D: int
    epsilon: float
    regime: str
    successes: int
    trials: int
    vacuous: int
    skipped: int
    p_hat: float
    se: float
    threshold: float | None
    passed: bool | None


@dataclass
class EvaluationReport:
    cells: list
    records: list = field(default_factory=list)
    base_seed: int = 0

    def summaries(self):
        out = []
        for ci, cell in enumerate(self.cells):
            recs = [r for r in self.records if r.cell == ci]
            ok = [r for r in recs if r.status == "ok"]
            s = sum(r.success for r in ok)
            t = len(ok)
            p = s / t if t else math.nan
            se = math.sqrt(p * (1 - p) / t) if t else math.nan
            passed = None
            if cell.threshold is not None:
                passed = bool(t > 0 and p >= cell.threshold)
            D = recs[0].D if recs else (cell.D or cell.d + 1)
            out.append(CellSummary(ci, cell.label, cell.model, cell.n, cell.d, D, cell.epsilon,
                                   cell.regime, s, t,
                                   sum(r.status == "vacuous" for r in recs),
                                   sum(r.status == "skipped" for r in recs), p, se,
                                   cell.threshold, passed))
        return out

    def failed_cells(self):
        return [s for s in self.summaries() if s.passed is False]

    def write_trials_csv(self, path):
        _write_csv(path, [asdict(r) for r in self.records])

    def write_aggregate_csv(self, path):
        _write_csv(path, [asdict(s) for s in self.summaries()])


def _fmt_cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def _write_csv(path, rows):
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt_cell(v) for v in r.values()])


def _run_cell_trials(args):
    cell, ci, trials, base_seed = args
    key = cell.key()
    return [run_trial(cell, ci, t, trial_seed(base_seed, key, t)) for t in range(trials)]


def experiment_sweep(grid, trials: int, base_seed: int = 0, jobs: int = 1) -> EvaluationReport:
    """Run every cell for ``trials`` seeds; records are ordered by (cell, trial)."""
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    cells = list(grid)
    if not cells:
        raise InvalidArgument("grid is empty")
    work = [(c, i, trials, base_seed) for i, c in enumerate(cells)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            chunks = list(ex.map(_run_cell_trials, work))
    else:
        chunks = [_run_cell_trials(w) for w in work]
    recs = [r for ch in chunks for r in ch]
    return EvaluationReport(cells, recs, base_seed)
