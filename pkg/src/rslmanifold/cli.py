"""Command-line entry point: rslmanifold <subcommand> [options].

Option values are resolved as flags > environment > config file > defaults.
Environment overrides use RSLMANIFOLD_<OPTION>, e.g. RSLMANIFOLD_SEED=3 or
RSLMANIFOLD_JOBS=2.  The config file (--config) is INI text with one
section per subcommand.  Every output file gets a JSON manifest beside it,
and ``rerun`` replays a manifest.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import itertools
import json
import math
import os
import sys
import time


from . import __version__
from . import io as rio
from .errors import RSLError
from .evaluation import Cell, build_model, experiment_sweep, noise_for_cell
from .geometry import (
    SphereSpec,
    ball_volume_bounds,
    cap_volume,
    cap_volume_exact,
    cap_volume_series,
)
from .kde import KDEConfig, model_spheres, default_probes, kde_at, kde_level_clusters, \
    population_fh
from .params import (
    SalienceParams,
    choose_k,
    choose_r,
    mu,
    rho,
    sample_size_bound,
)
from .rsl import FixedR, Proportional, SphereVBall, adaptive_activation, sweep_from_activation
from .neighbors import DistanceIndex
from .samplers import sample

ENV_PREFIX = "RSLMANIFOLD_"


class UsageError(Exception):
    """Bad arguments detected after parsing; exit status 2."""


class AcceptanceFailure(Exception):
    """An acceptance-tagged cell missed its threshold; exit status 1."""


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {v!r}")


def _fmt(v):
    if isinstance(v, float):
        return rio.fmt(v)
    if v is None:
        return ""
    return str(v)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# ---------------------------------------------------------------- manifest


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_manifest(path, command, config, outputs, inputs=(), duration=0.0):
    data = {
        "subcommand": command,
        "config": {k: _json_safe(v) for k, v in sorted(config.items())},
        "seed": config.get("seed"),
        "version": __version__,
        "inputs": list(inputs),
        "outputs": list(outputs),
        "wall_clock_seconds": round(duration, 3),
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _manifest_path(primary):
    return str(primary) + ".manifest.json"


# ---------------------------------------------------------------- cell options

_CELL_HELP = {
    "model": "lower_bound, mixture or uniform",
    "regime": "noiseless, clutter or additive",
    "theta": "additive noise radius, or gate/<m> for theta_gate / m",
    "k": "'theorem' or an integer",
    "R": "'theorem', 'prop:<c>' or 'fixed:<R>'",
    "verdict": "'theorem', 'scan' or 'fixed:<r>'",
}


def _add_cell_args(p, skip=()):
    for f in dataclasses.fields(Cell):
        if f.name in skip:
            continue
        t = str(f.type)
        if t.startswith("bool"):
            typ = _bool
        elif t.startswith("int"):
            typ = int
        elif t.startswith("float"):
            typ = float
        else:
            typ = str
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cell_{f.name}", type=typ,
                       default=f.default, help=_CELL_HELP.get(f.name))


# cell fields that make no sense for the kde subcommand
_KDE_SKIP = ("n", "d", "k", "R", "verdict", "adaptive", "delta", "C0", "threshold", "label")


def _cell_from_ns(ns):
    kw = {f.name: getattr(ns, f"cell_{f.name}") for f in dataclasses.fields(Cell)
          if hasattr(ns, f"cell_{f.name}")}
    return Cell(**kw)


# ---------------------------------------------------------------- handlers


def cmd_generate(ns):
    cell = _cell_from_ns(ns)
    model = build_model(cell)
    smp = sample(model, noise_for_cell(cell, model), cell.n, ns.seed)
    rio.write_points(ns.out, smp.observed, smp.latent, smp.origin, smp.fingerprint)
    return [ns.out], []


PARAM_COLUMNS = ["regime", "rho", "rho_branch", "n", "mu", "c_delta", "k", "r", "feasible",
                 "gate", "n_min", "n_upper", "n_lower"]


def cmd_params(ns):
    p = SalienceParams(ns.sigma, ns.epsilon, ns.lam, ns.tau, ns.d, ns.delta, ns.C0,
                       strict=False)
    rr = rho(p, ns.regime)
    row = {c: None for c in PARAM_COLUMNS}
    row.update(regime=ns.regime, rho=rr.value, rho_branch=rr.branch)
    if ns.n is not None:
        m = mu(ns.n, rr.value, ns.d)
        k = choose_k(p, m, ns.regime) if ns.k is None else ns.k
        ch = choose_r(p, k, ns.n, m, ns.regime, pi=ns.pi)
        row.update(n=ns.n, mu=m, c_delta=ch.c_delta, k=k, r=ch.r, feasible=ch.feasible,
                   gate=ch.gate, n_min=ch.n_min)
    if rr.value < 1:
        est = sample_size_bound(p, ns.regime)
        row.update(n_upper=est.upper, n_lower=est.lower)
    if ns.out:
        _write_rows(ns.out, PARAM_COLUMNS, [[row[c] for c in PARAM_COLUMNS]])
        return [ns.out], []
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(PARAM_COLUMNS)
    w.writerow([_fmt(row[c]) for c in PARAM_COLUMNS])
    return [], []


def _rule_from_ns(ns):
    if (ns.R is None) == (ns.c is None):
        raise UsageError("give exactly one of --R (fixed radius) or --c (proportional)")
    return FixedR(ns.R) if ns.R is not None else Proportional(ns.c)


def cmd_cluster(ns):
    X, _, _, _ = rio.read_points(ns.inp)
    rule = _rule_from_ns(ns)
    if ns.k > X.shape[0]:
        raise UsageError(f"k={ns.k} exceeds n={X.shape[0]}")
    act = DistanceIndex(X).knn_radius(ns.k)
    if ns.adaptive:
        if ns.tau is None or ns.d is None:
            raise UsageError("--adaptive needs the sphere's --d and --tau")
        sph = SphereSpec.standard(ns.d, ns.tau, X.shape[1])
        act = adaptive_activation(X, act, SphereVBall(sph), ns.d)
    den = sweep_from_activation(X, act, rule, horizon=ns.horizon)
    rio.write_dendrogram(ns.out, den)
    outs = [ns.out]
    if ns.at is not None:
        if ns.partition is None:
            raise UsageError("--at needs --partition")
        rio.write_partition(ns.partition, den.components_at(ns.at))
        outs.append(ns.partition)
    return outs, [ns.inp]


def cmd_kde(ns):
    X, _, _, _ = rio.read_points(ns.inp)
    cfg = KDEConfig(ns.h, ns.mode, ns.d, X.shape[1])
    idx = DistanceIndex(X)
    model = noise = None
    if ns.population:
        cell = dataclasses.replace(_cell_from_ns(ns), d=ns.d)
        model = build_model(cell)
        noise = noise_for_cell(cell, model)
    if ns.probes == "samples":
        P = X
    elif model is None:
        raise UsageError("net probes need the generating model (--population)")
    else:
        P = default_probes(X, model_spheres(model), ns.h, ns.probes, ns.seed)
    f = kde_at(X, P, cfg, idx)
    fh = population_fh(model, P, cfg, noise, seed=ns.seed)[0] if model is not None else None
    coords = [f"x{j}" for j in range(P.shape[1])]
    rows = []
    for i in range(P.shape[0]):
        extra = [float(fh[i]), abs(float(f[i] - fh[i]))] if fh is not None else [None, None]
        rows.append([i, *map(float, P[i]), float(f[i]), *extra])
    _write_rows(ns.out, ["index", *coords, "fhat", "fh", "deviation"], rows)
    outs = [ns.out]
    if ns.lam is not None:
        if ns.R is None or ns.partition is None:
            raise UsageError("--level needs --linkage-R and --partition")
        rio.write_partition(ns.partition, kde_level_clusters(X, cfg, ns.lam, ns.R, idx))
        outs.append(ns.partition)
    return outs, [ns.inp]


def _report_outputs(rep, out_dir, figure, x):
    os.makedirs(out_dir, exist_ok=True)
    trials = os.path.join(out_dir, "trials.csv")
    agg = os.path.join(out_dir, "aggregate.csv")
    rep.write_trials_csv(trials)
    rep.write_aggregate_csv(agg)
    outs = [trials, agg]
    if figure:
        from .plotting import plot_success

        fig = os.path.join(out_dir, "success.png")
        plot_success(rep.summaries(), fig, x=x)
        outs.append(fig)
    for s in rep.summaries():
        flag = "" if s.passed is None else (" PASS" if s.passed else " FAIL")
        print(f"cell {s.cell} {s.label or s.model}: {s.successes}/{s.trials} "
              f"p_hat={s.p_hat:.3f} se={s.se:.3f} skipped={s.skipped}{flag}")
    return outs


def cmd_evaluate(ns):
    cell = _cell_from_ns(ns)
    rep = experiment_sweep([cell], ns.trials, ns.seed, 1)
    outs = _report_outputs(rep, ns.out_dir, ns.figure, ns.x)
    if rep.failed_cells():
        return outs, [], True
    return outs, []


def load_grid(path):
    """Cells from an INI grid file; comma lists in a cell section expand as a product.

    Section [experiment] may set trials, seed and jobs.  Every other section
    is one cell template labelled by the section name (a 'cell:' prefix is
    dropped); keys are Cell fields.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path):
        raise UsageError(f"cannot read grid file {path!r}")
    settings = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    cells = []
    for sec in cp.sections():
        if sec == "experiment":
            continue
        raw = dict(cp[sec])
        keys = sorted(raw)
        choices = [[v.strip() for v in raw[k].split(",")] for k in keys]
        for combo in itertools.product(*choices):
            d = dict(zip(keys, combo))
            d.setdefault("label", sec.split(":", 1)[-1])
            cells.append(Cell.from_dict(d))
    if not cells:
        raise UsageError("grid file defines no cells")
    return cells, settings


def cmd_experiment(ns):
    cells, settings = load_grid(ns.grid)
    trials = ns.trials if ns.trials is not None else int(settings.get("trials", 10))
    seed = ns.seed if ns.seed is not None else int(settings.get("seed", 0))
    jobs = ns.jobs if ns.jobs is not None else int(settings.get("jobs", 1))
    ns.trials, ns.seed, ns.jobs = trials, seed, jobs
    rep = experiment_sweep(cells, trials, seed, jobs)
    outs = _report_outputs(rep, ns.out_dir, ns.figure, ns.x)
    if rep.failed_cells():
        return outs, [ns.grid], True
    return outs, [ns.grid]


VOLUME_COLUMNS = ["d", "tau", "r", "cap_exact", "cap_betainc", "cap_series", "flat",
                  "lower", "upper"]


def cmd_volumes(ns):
    from .geometry import unit_ball_volume

    rows = []
    for r in ns.r:
        ex = cap_volume_exact(ns.d, ns.tau, r)
        bt = cap_volume(ns.d, ns.tau, r)
        try:
            se = cap_volume_series(ns.d, ns.tau, r)
        except RSLError:
            se = None
        flat = unit_ball_volume(ns.d) * r**ns.d
        if r < 0.5 * ns.tau:
            b = ball_volume_bounds(ns.d, ns.tau, r)
            lo, hi = b.lower, b.upper
        else:
            lo = hi = None
        rows.append([ns.d, ns.tau, r, ex, bt, se, flat, lo, hi])
    if ns.out:
        _write_rows(ns.out, VOLUME_COLUMNS, rows)
        return [ns.out], []
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(VOLUME_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return [], []


def cmd_rerun(ns):
    with open(ns.manifest) as fh:
        man = json.load(fh)
    cfg = dict(man["config"])
    for k, v in cfg.items():
        if v in ("inf", "-inf", "nan"):
            cfg[k] = float(v)
    if ns.out_dir:
        os.makedirs(ns.out_dir, exist_ok=True)
        for key in _OUTPUT_KEYS.get(man["subcommand"], ()):
            if cfg.get(key):
                base = os.path.basename(os.path.normpath(cfg[key]))
                cfg[key] = ns.out_dir if key == "out_dir" else os.path.join(ns.out_dir, base)
    sub = argparse.Namespace(**cfg, command=man["subcommand"])
    return _run(sub)


_OUTPUT_KEYS = {
    "generate": ("out",),
    "params": ("out",),
    "cluster": ("out", "partition"),
    "kde": ("out", "partition"),
    "evaluate": ("out_dir",),
    "experiment": ("out_dir",),
    "volumes": ("out",),
}

HANDLERS = {
    "generate": cmd_generate,
    "params": cmd_params,
    "cluster": cmd_cluster,
    "kde": cmd_kde,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "volumes": cmd_volumes,
}


# ---------------------------------------------------------------- parser


def build_parser():
    parser = argparse.ArgumentParser(prog="rslmanifold",
                                     description="Robust single linkage on sampled manifolds.")
    parser.add_argument("--config", help="INI file with one section per subcommand")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    subs = {}

    p = sub.add_parser("generate", help="sample a model and write a point cloud")
    _add_cell_args(p, skip=("k", "R", "verdict", "adaptive", "threshold", "label"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="points.csv")
    subs["generate"] = p

    p = sub.add_parser("params", help="rho, mu, k and r for a parameter set")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.4)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--regime", default="noiseless",
                   choices=("noiseless", "clutter", "additive", "kde"))
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="override the k formula")
    p.add_argument("--pi", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--C0", type=float, default=1.0)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    subs["params"] = p

    p = sub.add_parser("cluster", help="build an RSL dendrogram from a point file")
    p.add_argument("--in", dest="inp", default="points.csv")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--R", type=float, default=None, help="fixed connection radius")
    p.add_argument("--c", type=float, default=None, help="proportional rule R = c r")
    p.add_argument("--horizon", type=float, default=math.inf)
    p.add_argument("--adaptive", type=_bool, default=False)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--at", type=float, default=None, help="also write the partition at r")
    p.add_argument("--partition", default=None)
    p.add_argument("--out", default="dendrogram.txt")
    subs["cluster"] = p

    p = sub.add_parser("kde", help="ball-kernel density estimate at probe points")
    p.add_argument("--in", dest="inp", default="points.csv")
    p.add_argument("--h", type=float, default=0.1)
    p.add_argument("--mode", default="intrinsic", choices=("intrinsic", "ambient"))
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--probes", default="samples", choices=("samples", "net", "both"),
                   help="sample points, an h/2 net of the model, or both")
    p.add_argument("--population", type=_bool, nargs="?", const=True, default=False,
                   help="also report f_h and the deviation, using the model flags below")
    p.add_argument("--seed", type=int, default=0, help="net and Monte Carlo seed")
    p.add_argument("--level", "--lam", dest="lam", type=float, default=None,
                   help="level for heuristic clusters")
    p.add_argument("--linkage-R", "--R", dest="R", type=float, default=None)
    p.add_argument("--partition", default=None)
    _add_cell_args(p, skip=_KDE_SKIP)
    p.add_argument("--out", default="kde.csv")
    subs["kde"] = p

    for name, hlp in (("evaluate", "run one grid cell for several trials"),
                      ("experiment", "run a grid of cells from a config file")):
        p = sub.add_parser(name, help=hlp)
        if name == "evaluate":
            _add_cell_args(p)
            p.add_argument("--trials", type=int, default=10)
            p.add_argument("--seed", type=int, default=0)
        else:
            p.add_argument("grid", help="INI grid file")
            p.add_argument("--trials", type=int, default=None)
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--out-dir", dest="out_dir", default="results")
        p.add_argument("--figure", type=_bool, nargs="?", const=True, default=False,
                       help="also render success.png next to the CSVs")
        p.add_argument("--x", default="n", help="x axis column of the figure")
        subs[name] = p

    p = sub.add_parser("volumes", help="cap volumes and ball-volume bounds")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--r", type=float, nargs="+", default=[0.1])
    p.add_argument("--out", default=None)
    subs["volumes"] = p

    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", dest="out_dir", default=None,
                   help="write outputs here instead of the recorded paths")
    subs["rerun"] = p
    return parser, subs


def _convert(action, raw):
    if action.nargs in ("+", "*"):
        return [action.type(v) if action.type else v for v in raw.replace(",", " ").split()]
    return action.type(raw) if action.type else raw


def _apply_layers(parser, subs, argv, environ):
    """Install file then environment values as subparser defaults."""
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if a in subs), None)
    if command is None:
        return
    sp = subs[command]
    file_vals = {}
    if known.config:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        if not cp.read(known.config):
            raise UsageError(f"cannot read config file {known.config!r}")
        if cp.has_section(command):
            file_vals = {k.replace("-", "_"): v for k, v in cp[command].items()}
    defaults = {}
    for action in sp._actions:
        if not action.option_strings or action.dest == "help":
            continue
        names = {action.dest, action.option_strings[-1].lstrip("-").replace("-", "_")}
        for src in (file_vals, None):
            for nm in names:
                if src is None:
                    raw = environ.get(ENV_PREFIX + nm.upper())
                else:
                    raw = src.get(nm)
                if raw is not None:
                    try:
                        defaults[action.dest] = _convert(action, raw)
                    except (ValueError, argparse.ArgumentTypeError) as exc:
                        raise UsageError(f"bad value for {nm}: {raw!r} ({exc})") from exc
    sp.set_defaults(**defaults)


def _run(ns):
    t0 = time.perf_counter()
    result = HANDLERS[ns.command](ns)
    outs, ins = result[0], result[1]
    failed = len(result) > 2 and result[2]
    cfg = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if outs:
        primary = ns.out_dir if ns.command in ("evaluate", "experiment") else outs[0]
        mpath = (os.path.join(primary, "manifest.json")
                 if ns.command in ("evaluate", "experiment") else _manifest_path(primary))
        write_manifest(mpath, ns.command, cfg, outs, ins, time.perf_counter() - t0)
    return 1 if failed else 0


def main(argv=None, environ=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    environ = os.environ if environ is None else environ
    parser, subs = build_parser()
    try:
        _apply_layers(parser, subs, argv, environ)
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        if ns.command is None:
            parser.print_usage(sys.stderr)
            return 2
        if ns.command == "rerun":
            return cmd_rerun(ns)
        return _run(ns)
    except (UsageError, ValueError, OSError) as exc:
        print(f"rslmanifold: error: {exc}", file=sys.stderr)
        return 2
    except AcceptanceFailure as exc:
        print(f"rslmanifold: {exc}", file=sys.stderr)
        return 1
    except RSLError as exc:
        print(f"rslmanifold: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
