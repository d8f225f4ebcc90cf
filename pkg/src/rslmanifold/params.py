"""Parameter calculators for RSL runs: rho, mu, k, r, gates and sample sizes.

All logarithms are natural.  Universal constants are configurable and
default to C0 = 1, C1 = 16 (2 C0)^2, C2 = 2 C0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

from .errors import InvalidArgument
from .geometry import unit_ball_volume

__all__ = [
    "REGIMES",
    "SalienceParams",
    "RhoResult",
    "RadiusChoice",
    "SampleSizeEstimate",
    "rho",
    "mu",
    "c_delta",
    "choose_k",
    "choose_r",
    "r_equation_rhs",
    "r_prefactor",
    "theorem_gate",
    "sample_size_bound",
    "theta_gate",
    "connection_radius",
]

REGIMES = ("noiseless", "clutter", "additive", "kde")


@dataclass(frozen=True)
class SalienceParams:
    """Separation certificate (sigma, epsilon) at level lam plus run constants."""

    sigma: float
    epsilon: float
    lam: float
    tau: float
    d: int
    delta: float = 0.05
    C0: float = 1.0
    C1: float | None = None
    C2: float | None = None
    strict: bool = True

    def __post_init__(self):
        # strict=False admits any epsilon > 0 for formula-only evaluation
        hi = 0.5 if self.strict else math.inf
        if not 0 < self.epsilon < hi:
            raise InvalidArgument(f"epsilon must lie in (0, {hi}), got {self.epsilon}")
        for name in ("sigma", "tau", "lam", "delta", "C0"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not self.delta < 1:
            raise InvalidArgument("delta must be < 1")
        if int(self.d) != self.d or self.d < 1:
            raise InvalidArgument("d must be a positive integer")
        if self.C1 is None:
            object.__setattr__(self, "C1", 16.0 * (2.0 * self.C0) ** 2)
        if self.C2 is None:
            object.__setattr__(self, "C2", 2.0 * self.C0)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RhoResult:
    value: float
    branch: str
    candidates: dict = field(default_factory=dict)

    def __float__(self):
        return self.value


def _check_regime(regime):
    if regime not in REGIMES:
        raise InvalidArgument(f"unknown regime {regime!r}; expected one of {REGIMES}")


def rho(p: SalienceParams, regime: str = "noiseless") -> RhoResult:
    """Smallest of the regime's three length scales, with the winning branch.

    Ties go to the first branch in the order sigma, epsilon, tau.
    """
    _check_regime(regime)
    s, e, t, d = p.sigma, p.epsilon, p.tau, p.d
    if regime == "noiseless":
        cands = {"sigma": 3 * s / 16, "epsilon": e * t / (72 * d), "tau": t / 16}
    elif regime == "clutter":
        cands = {"sigma": s / 7, "epsilon": e * t / (72 * d), "tau": t / 24}
    elif regime == "additive":
        cands = {"sigma": s / 7, "epsilon": e * t / (144 * d), "tau": t / 24}
    else:
        cands = {"sigma": s, "epsilon": e * t / (72 * d), "tau": t / 8}
    branch = min(cands, key=lambda b: cands[b])
    return RhoResult(cands[branch], branch, cands)


def mu(n: int, rho_value: float, d: int, A: float | None = None) -> float:
    """log n + d log(1/rho), or 2 A log n when a density exponent A is given."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if A is not None:
        return 2.0 * A * math.log(n)
    if not rho_value > 0:
        raise InvalidArgument("rho must be positive")
    if rho_value >= 1:
        warnings.warn(f"rho = {rho_value} >= 1 makes d log(1/rho) negative", stacklevel=2)
    return math.log(n) + d * math.log(1.0 / rho_value)


def c_delta(delta: float, C0: float = 1.0) -> float:
    """C_delta = 2 C0 log(2 / delta)."""
    return 2.0 * C0 * math.log(2.0 / delta)


def _k_factor(regime):
    return 144.0 if regime == "clutter" else 16.0


def choose_k(p: SalienceParams, mu_value: float, regime: str = "noiseless") -> int:
    """ceil(F C_delta^2 mu / eps^2) with F = 144 for clutter and 16 otherwise."""
    _check_regime(regime)
    cd = c_delta(p.delta, p.C0)
    raw = _k_factor(regime) * cd * cd * mu_value / (p.epsilon**2)
    k = math.ceil(raw * (1 - 1e-14))
    if k < 1:
        warnings.warn(f"k formula gave {raw:.4g}; clamped to 1", stacklevel=2)
        k = 1
    return int(k)


def r_prefactor(p: SalienceParams, regime: str, pi: float = 1.0) -> float:
    """Multiplier of v_d r^d lambda on the left of the regime's r equation."""
    _check_regime(regime)
    e = p.epsilon
    if regime == "clutter":
        if not 0 < pi <= 1:
            raise InvalidArgument("pi must lie in (0, 1]")
        return pi * (1 - e / 6)
    if regime == "additive":
        return (1 - e / 12) * (1 - e / 6)
    return 1 - e / 6


def r_equation_rhs(k: int, n: int, mu_value: float, cd: float) -> float:
    """k/n + (C_delta / n) sqrt(k mu)."""
    return k / n + cd / n * math.sqrt(k * mu_value)


def theorem_gate(p: SalienceParams, rho_value: float, k: int, n: int) -> bool:
    """lambda >= 2 k / (v_d rho^d n)."""
    return p.lam >= 2.0 * k / (unit_ball_volume(p.d) * rho_value**p.d * n)


@dataclass(frozen=True)
class RadiusChoice:
    r: float
    rho: float
    rho_branch: str
    k: int
    n: int
    mu: float
    c_delta: float
    rhs: float
    feasible: bool
    gate: bool
    n_min: int | None
    reason: str = ""


def choose_r(
    p: SalienceParams,
    k: int,
    n: int,
    mu_value: float,
    regime: str = "noiseless",
    pi: float = 1.0,
    rho_value: float | None = None,
) -> RadiusChoice:
    """Solve the regime's r equation in closed form and check r <= rho.

    When r > rho the result is marked infeasible and ``n_min`` holds the
    smallest n (at the same k and mu) for which r <= rho.
    """
    _check_regime(regime)
    if not p.lam > 0:
        raise InvalidArgument("lambda must be positive")
    if k < 1 or n < 1:
        raise InvalidArgument("k and n must be >= 1")
    rr = rho(p, regime)
    rv = rr.value if rho_value is None else rho_value
    cd = c_delta(p.delta, p.C0)
    rhs = r_equation_rhs(k, n, mu_value, cd)
    vd = unit_ball_volume(p.d)
    pref = r_prefactor(p, regime, pi)
    r = (rhs / (vd * pref * p.lam)) ** (1.0 / p.d)
    gate = theorem_gate(p, rv, k, n)
    reasons = []
    if k > n:
        reasons.append(f"k={k} exceeds n={n}")
    feasible = r <= rv and k <= n
    n_min = None
    if r > rv:
        reasons.append(f"r={r:.6g} exceeds rho={rv:.6g}")
        # rhs is proportional to 1/n at fixed k and mu
        need = rhs * n / (vd * pref * p.lam * rv**p.d)
        n_min = max(int(math.ceil(need * (1 - 1e-14))), k)
    return RadiusChoice(
        r=r,
        rho=rv,
        rho_branch=rr.branch if rho_value is None else "given",
        k=int(k),
        n=int(n),
        mu=mu_value,
        c_delta=cd,
        rhs=rhs,
        feasible=feasible,
        gate=gate,
        n_min=n_min,
        reason="; ".join(reasons),
    )


@dataclass(frozen=True)
class SampleSizeEstimate:
    upper: float
    lower: float
    upper_label: str = "C1 (d / (lam eps^2 v_d rho^d)) log(same)"
    lower_label: str = "d^(d/2) / (tau^d lam eps^(d/2))"


def sample_size_bound(p: SalienceParams, regime: str = "noiseless") -> SampleSizeEstimate:
    """Guidance values for n; neither is a guarantee."""
    rv = rho(p, regime).value
    d, e = p.d, p.epsilon
    base = d / (p.lam * e * e * unit_ball_volume(d) * rv**d)
    upper = p.C1 * base * math.log(base)
    lower = d ** (d / 2) / (p.tau**d * p.lam * e ** (d / 2))
    return SampleSizeEstimate(upper, lower)


def theta_gate(p: SalienceParams, rho_value: float) -> float:
    """Largest admissible additive-noise radius, rho eps / (24 d)."""
    return rho_value * p.epsilon / (24.0 * p.d)


def connection_radius(rule: str, *, rho_value=None, r=None, r_u=None) -> float:
    """R for the named rule: '4rho', '5rho', '4r', '4ru' or 'sqrt2r'."""
    table = {
        "4rho": (rho_value, 4.0),
        "5rho": (rho_value, 5.0),
        "4r": (r, 4.0),
        "4ru": (r_u, 4.0),
        "sqrt2r": (r, math.sqrt(2.0)),
    }
    if rule not in table:
        raise InvalidArgument(f"unknown connection rule {rule!r}")
    base, mult = table[rule]
    if base is None:
        raise InvalidArgument(f"rule {rule!r} needs its base radius")
    return mult * base
