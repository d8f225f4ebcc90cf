"""Synthetic densities on spheres and sphere pieces, with noise models.

Every model is a finite list of :class:`Piece` objects: a constant density on
an angular band {theta_lo <= angle(u, axis) <= theta_hi} of one sphere.  That
single representation gives exact sampling (inverse incomplete beta on the
polar angle), exact densities and, wherever a ball does not straddle a band
edge, exact ball masses.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import InvalidArgument, InvalidSpec
from .geometry import (
    SphereSpec,
    cap_volume_from_angle,
    farthest_point_order,
    sphere_surface_volume,
    unit_ball_volume,
)

__all__ = [
    "Piece",
    "UniformSphere",
    "SphereMixture",
    "LowerBoundInstance",
    "NoNoise",
    "Clutter",
    "Additive",
    "LabeledSample",
    "MassResult",
    "CLUTTER_TAG",
    "sample",
    "density_at",
    "ball_mass_oracle",
    "ball_masses",
    "band_fraction",
    "sample_band",
]

CLUTTER_TAG = -1
SURFACE_TOL = 1e-9


def _cap_fraction(d, theta):
    return cap_volume_from_angle(d, 1.0, theta) / sphere_surface_volume(d, 1.0)


def band_fraction(d, theta_lo, theta_hi):
    """Fraction of S^d with polar angle (about a fixed axis) in [lo, hi]."""
    return float(_cap_fraction(d, theta_hi) - _cap_fraction(d, theta_lo))


def _inverse_cap_fraction(d, q):
    q = np.asarray(q, dtype=float)
    low = q <= 0.5
    s2 = np.where(
        low,
        special.betaincinv(0.5 * d, 0.5, np.clip(2 * q, 0, 1)),
        special.betaincinv(0.5 * d, 0.5, np.clip(2 * (1 - q), 0, 1)),
    )
    a = np.arcsin(np.sqrt(np.clip(s2, 0, 1)))
    return np.where(low, a, math.pi - a)


def _householder(axis):
    """Symmetric orthogonal matrix H with H e1 = axis."""
    m = axis.shape[0]
    e1 = np.zeros(m)
    e1[0] = 1.0
    v = e1 - axis
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return np.eye(m)
    v /= nv
    return np.eye(m) - 2.0 * np.outer(v, v)


def sample_band(d, axis, theta_lo, theta_hi, n, rng):
    """Uniform unit vectors in R^(d+1) with angle to ``axis`` in [lo, hi]."""
    q0, q1 = _cap_fraction(d, theta_lo), _cap_fraction(d, theta_hi)
    theta = _inverse_cap_fraction(d, q0 + (q1 - q0) * rng.random(n))
    theta = np.clip(theta, theta_lo, theta_hi)
    w = rng.standard_normal((n, d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    u = np.empty((n, d + 1))
    u[:, 0] = np.cos(theta)
    u[:, 1:] = np.sin(theta)[:, None] * w
    return u @ _householder(np.asarray(axis, dtype=float))


def _angle_to(u, axis):
    """Angle between rows of unit vectors u and a unit axis (atan2 form)."""
    c = u @ axis
    s = np.linalg.norm(u - c[:, None] * axis, axis=1)
    return np.arctan2(s, c)


@dataclass(frozen=True)
class Piece:
    """Constant density on an angular band of one sphere.

    The band is {u : theta_lo <= angle(u, axis) <= theta_hi} in the sphere's
    unit coordinates; ``closed`` says which ends belong to the piece so that
    adjacent pieces partition the seam instead of double counting it.
    """

    sphere: SphereSpec
    axis: np.ndarray
    theta_lo: float
    theta_hi: float
    density: float
    tag: int
    closed: tuple = (True, True)

    @property
    def volume(self):
        return self.sphere.volume * band_fraction(self.sphere.d, self.theta_lo, self.theta_hi)

    @property
    def mass(self):
        return self.density * self.volume

    def unit_coords(self, x):
        w, zn = self.sphere.local(x)
        on = np.hypot(np.linalg.norm(w, axis=1) - self.sphere.tau, zn) <= SURFACE_TOL * self.sphere.tau
        norm = np.linalg.norm(w, axis=1, keepdims=True)
        u = w / np.where(norm > 0, norm, 1.0)
        return u, on

    def contains(self, x):
        u, on = self.unit_coords(x)
        t = _angle_to(u, self.axis)
        lo = t >= self.theta_lo if self.closed[0] else t > self.theta_lo
        hi = t <= self.theta_hi if self.closed[1] else t < self.theta_hi
        return on & lo & hi

    def sample(self, n, rng):
        u = sample_band(self.sphere.d, self.axis, self.theta_lo, self.theta_hi, n, rng)
        return self.sphere.from_unit(u)


def _e1(m):
    a = np.zeros(m)
    a[0] = 1.0
    return a


class _Model:
    """Shared behaviour of the density models."""

    def pieces(self):
        raise NotImplementedError

    def describe(self):
        raise NotImplementedError

    def total_mass(self):
        return float(sum(p.mass for p in self.pieces()))

    def validate(self):
        ps = self.pieces()
        if any(p.density < 0 for p in ps):
            raise InvalidSpec("negative piece density")
        tot = self.total_mass()
        if not abs(tot - 1.0) <= 1e-9:
            raise InvalidSpec(f"model mass is {tot!r}, not 1")
        return self


@dataclass(frozen=True)
class UniformSphere(_Model):
    sphere: SphereSpec

    @property
    def d(self):
        return self.sphere.d

    @property
    def D(self):
        return self.sphere.D

    def pieces(self):
        s = self.sphere
        return (Piece(s, _e1(s.d + 1), 0.0, math.pi, 1.0 / s.volume, 0),)

    def describe(self):
        return {"model": "uniform", "d": self.sphere.d, "tau": self.sphere.tau, "D": self.sphere.D}


@dataclass(frozen=True)
class SphereMixture(_Model):
    """Uniform background plus equal-weight uniform caps (bumps).

    ``centers`` are surface points; bump j is the cap of chord radius
    ``bump_radius`` around centers[j] and carries mass bump_weight / m.
    """

    sphere: SphereSpec
    centers: np.ndarray
    bump_radius: float = 0.25
    bump_weight: float = 0.7
    background_weight: float = 0.3

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)
        for w in (self.bump_weight, self.background_weight):
            if not 0 <= w <= 1:
                raise InvalidSpec("mixture weights must lie in [0, 1]")
        if abs(self.bump_weight + self.background_weight - 1) > 1e-12:
            raise InvalidSpec("mixture weights must sum to 1")
        if not 0 < self.bump_radius <= 2 * self.sphere.tau:
            raise InvalidSpec("bump radius must lie in (0, 2 tau]")
        if not np.all(self.sphere.on_surface(c)):
            raise InvalidSpec("bump centers must lie on the sphere")

    @classmethod
    def default(cls, d=2, tau=1.0, D=None, n_bumps=10, bump_radius=0.25,
                bump_weight=0.7, seed=0):
        """Bumps at a farthest-point configuration of a dense sphere sample."""
        sphere = SphereSpec.standard(d, tau, D)
        rng = np.random.default_rng(seed)
        cand = sphere.sample(20_000, rng)
        idx, _ = farthest_point_order(cand, count=n_bumps)
        return cls(sphere, cand[idx], bump_radius, bump_weight, 1.0 - bump_weight)

    @property
    def d(self):
        return self.sphere.d

    @property
    def D(self):
        return self.sphere.D

    @property
    def n_bumps(self):
        return self.centers.shape[0]

    @property
    def bump_angle(self):
        return 2.0 * math.asin(min(1.0, self.bump_radius / (2 * self.sphere.tau)))

    def bump_axes(self):
        w, _ = self.sphere.local(self.centers)
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    def pieces(self):
        s = self.sphere
        m = self.n_bumps
        out = [Piece(s, _e1(s.d + 1), 0.0, math.pi, self.background_weight / s.volume, m)]
        beta = self.bump_angle
        vol = s.volume * band_fraction(s.d, 0.0, beta)
        for j, ax in enumerate(self.bump_axes()):
            out.append(Piece(s, ax, 0.0, beta, self.bump_weight / m / vol, j))
        return tuple(out)

    def describe(self):
        return {
            "model": "mixture",
            "d": self.sphere.d,
            "tau": self.sphere.tau,
            "D": self.sphere.D,
            "centers": self.centers.tolist(),
            "bump_radius": self.bump_radius,
            "bump_weight": self.bump_weight,
            "background_weight": self.background_weight,
        }


@dataclass(frozen=True)
class LowerBoundInstance(_Model):
    """Unit-sphere band capped by two radius-2tau hemispheres, plus a far sphere.

    The band is the unit sphere restricted to |x1| <= sqrt(1 - 4 tau^2).  The
    density is ``lam`` where |x1| > 1/2 and lam (1 - epsilon) elsewhere on C.
    A separate sphere C' at gap ``gap * tau`` carries the residual mass at
    density ``lam``.  The seams between band and hemispheres are not smoothed.
    Tags: 0 top hemisphere, 1 upper band, 2 middle band, 3 lower band,
    4 bottom hemisphere, 5 far sphere.
    """

    d: int
    tau: float
    epsilon: float
    lam: float | None = None
    D: int | None = None
    gap: float = 10.0
    smoothed: bool = field(default=False, init=False)

    def __post_init__(self):
        if not 0 < self.tau < math.sqrt(3) / 4:
            raise InvalidSpec("tau must lie in (0, sqrt(3)/4) so the band contains |x1| <= 1/2")
        if not 0 <= self.epsilon < 1:
            raise InvalidSpec("epsilon must lie in [0, 1)")
        D = self.d + 1 if self.D is None else self.D
        if D < self.d + 1:
            raise InvalidSpec("ambient dimension must be >= d + 1")
        object.__setattr__(self, "D", D)
        if self.lam is None:
            object.__setattr__(self, "lam", 1.0 / self.volume_C)
        if not self.lam > 0 or self.lam * self.volume_C > 1 + 1e-12:
            raise InvalidSpec("need 0 < lam and lam vol(C) <= 1")
        object.__setattr__(self, "_pieces", self._build())

    @property
    def band_edge(self):
        return math.sqrt(1.0 - 4.0 * self.tau**2)

    @property
    def volume_C(self):
        a = math.acos(self.band_edge)
        unit = sphere_surface_volume(self.d, 1.0)
        band = unit * band_fraction(self.d, a, math.pi - a)
        return band + sphere_surface_volume(self.d, 2 * self.tau)

    @property
    def far_radius(self):
        return self._far_radius

    def _build(self):
        d, D, t = self.d, self.D, self.tau
        a = self.band_edge
        e1 = _e1(d + 1)
        unit = SphereSpec.standard(d, 1.0, D)
        top = SphereSpec.standard(d, 2 * t, D, center=a * _e1(D))
        bot = SphereSpec.standard(d, 2 * t, D, center=-a * _e1(D))
        ta = math.acos(a)
        lam, low = self.lam, self.lam * (1 - self.epsilon)
        pcs = [
            Piece(top, e1, 0.0, 0.5 * math.pi, lam, 0),
            Piece(unit, e1, ta, math.pi / 3, lam, 1, (False, False)),
            Piece(unit, e1, math.pi / 3, 2 * math.pi / 3, low, 2),
            Piece(unit, e1, 2 * math.pi / 3, math.pi - ta, lam, 3, (False, False)),
            Piece(bot, e1, 0.5 * math.pi, math.pi, lam, 4),
        ]
        resid = 1.0 - sum(p.mass for p in pcs)
        far_r = 0.0
        if resid > 1e-15:
            vol = resid / lam
            far_r = (vol / sphere_surface_volume(d, 1.0)) ** (1.0 / d)
            c = np.zeros(D)
            c[1] = 1.0 + self.gap * t + far_r
            far = SphereSpec.standard(d, far_r, D, center=c)
            pcs.append(Piece(far, e1, 0.0, math.pi, resid / far.volume, 5))
        object.__setattr__(self, "_far_radius", far_r)
        return tuple(pcs)

    def pieces(self):
        return self._pieces

    def spheres(self):
        """Distinct sphere pieces: unit band sphere, top, bottom, far sphere."""
        ps = self._pieces
        out = [ps[1].sphere, ps[0].sphere, ps[4].sphere]
        if len(ps) > 5:
            out.append(ps[5].sphere)
        return out

    def describe(self):
        return {
            "model": "lower_bound",
            "d": self.d,
            "tau": self.tau,
            "D": self.D,
            "epsilon": self.epsilon,
            "lam": self.lam,
            "gap": self.gap,
            "smoothed": self.smoothed,
        }


@dataclass(frozen=True)
class NoNoise:
    def describe(self):
        return {"noise": "none"}


@dataclass(frozen=True)
class Clutter:
    """Observed law (1 - pi) Uniform(box) + pi P; box is a cube of half-width
    ``half_width`` around ``center`` (the model's first sphere centre if None)."""

    pi: float
    half_width: float = 2.0
    center: tuple | None = None

    def __post_init__(self):
        if not 0 < self.pi <= 1:
            raise InvalidSpec("pi must lie in (0, 1]")
        if not self.half_width > 0:
            raise InvalidSpec("box half-width must be positive")

    def box(self, model):
        c = model.pieces()[0].sphere.center if self.center is None else np.asarray(self.center, float)
        lo, hi = c - self.half_width, c + self.half_width
        for p in model.pieces():
            ext = p.sphere.tau * np.linalg.norm(p.sphere.basis, axis=1)
            if np.any(p.sphere.center - ext < lo) or np.any(p.sphere.center + ext > hi):
                raise InvalidSpec("clutter box does not contain the manifold support")
        return lo, hi

    def describe(self):
        return {"noise": "clutter", "pi": self.pi, "half_width": self.half_width,
                "center": None if self.center is None else list(self.center)}


@dataclass(frozen=True)
class Additive:
    """Y = X + eta with eta uniform in B(0, theta), or on its boundary shell."""

    theta: float
    shape: str = "ball"

    def __post_init__(self):
        if self.theta < 0:
            raise InvalidSpec("theta must be nonnegative")
        if self.shape not in ("ball", "shell"):
            raise InvalidSpec("shape must be 'ball' or 'shell'")

    def describe(self):
        return {"noise": "additive", "theta": self.theta, "shape": self.shape}


@dataclass(frozen=True)
class LabeledSample:
    observed: np.ndarray
    latent: np.ndarray
    origin: np.ndarray
    fingerprint: str
    model: object = field(repr=False)
    noise: object = field(repr=False)
    seed: int = 0

    @property
    def n(self):
        return self.observed.shape[0]

    @property
    def from_manifold(self):
        return self.origin != CLUTTER_TAG


def fingerprint(model, noise, n, seed):
    blob = json.dumps(
        {"model": model.describe(), "noise": noise.describe(), "n": int(n), "seed": int(seed)},
        sort_keys=True,
    )
    return hashlib.blake2b(blob.encode(), digest_size=12).hexdigest()


def _sample_model(model, n, rng):
    ps = model.pieces()
    w = np.array([p.mass for p in ps])
    comp = rng.choice(len(ps), size=n, p=w / w.sum())
    X = np.empty((n, model.D))
    for j, p in enumerate(ps):
        idx = np.nonzero(comp == j)[0]
        if idx.size:
            X[idx] = p.sample(idx.size, rng)
    tags = np.array([p.tag for p in ps], dtype=np.int64)[comp]
    return X, tags


def _uniform_ball(n, D, radius, rng, shell=False):
    g = rng.standard_normal((n, D))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = np.full(n, radius) if shell else radius * rng.random(n) ** (1.0 / D)
    return g * rad[:, None]


def sample(model, noise=None, n=1, seed=0) -> LabeledSample:
    """Draw n i.i.d. points; deterministic given (model, noise, n, seed)."""
    noise = NoNoise() if noise is None else noise
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    model.validate()
    rng = np.random.default_rng(seed)
    if isinstance(noise, Clutter):
        lo, hi = noise.box(model)
        keep = rng.random(n) < noise.pi
        m = int(keep.sum())
        X = np.empty((n, model.D))
        tags = np.full(n, CLUTTER_TAG, dtype=np.int64)
        X[keep], tags[keep] = _sample_model(model, m, rng)
        X[~keep] = lo + (hi - lo) * rng.random((n - m, model.D))
        obs, lat = X, X
    else:
        X, tags = _sample_model(model, n, rng)
        lat = X
        if isinstance(noise, Additive):
            obs = X + _uniform_ball(n, model.D, noise.theta, rng, noise.shape == "shell")
        elif isinstance(noise, NoNoise):
            obs = X
        else:
            raise InvalidSpec(f"unknown noise model {noise!r}")
    return LabeledSample(obs, lat, tags, fingerprint(model, noise, n, seed), model, noise, int(seed))


def density_at(model, x):
    """Density of P at points x w.r.t. d-volume on the support.

    Returns (values, on_support); off-support points get 0 and False.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    val = np.zeros(x.shape[0])
    on = np.zeros(x.shape[0], dtype=bool)
    for p in model.pieces():
        inside = p.contains(x)
        val[inside] += p.density
        on |= inside
    return val, on


@dataclass(frozen=True)
class MassResult:
    mass: float
    se: float = 0.0
    monte_carlo: bool = False


def _piece_ball_volumes(p, centers, r, rng, n_mc):
    """vol_d(B(c, r) ∩ piece) for each centre; returns (volume, se, used_mc) arrays."""
    s = p.sphere
    m = centers.shape[0]
    alpha = s.cap_angle(centers, r)
    vol = np.zeros(m)
    se = np.zeros(m)
    mc = np.zeros(m, dtype=bool)
    whole = alpha >= math.pi
    vol[whole] = p.volume
    part = (alpha >= 0) & ~whole
    if not part.any():
        return vol, se, mc
    idx = np.nonzero(part)[0]
    w, _ = s.local(centers[idx])
    b = w / np.linalg.norm(w, axis=1, keepdims=True)
    a = alpha[idx]
    phi = _angle_to(b, p.axis)
    cap = cap_volume_from_angle(s.d, s.tau, a)
    lo_ang, hi_ang = np.maximum(0.0, phi - a), np.minimum(math.pi, phi + a)
    inside = (lo_ang >= p.theta_lo) & (hi_ang <= p.theta_hi)
    outside = (hi_ang < p.theta_lo) | (lo_ang > p.theta_hi)
    swallow = ~inside & ~outside & (phi + p.theta_hi <= a)
    vol[idx[inside]] = cap[inside]
    vol[idx[swallow]] = p.volume
    for t in np.nonzero(~inside & ~outside & ~swallow)[0]:
        u = sample_band(s.d, b[t], 0.0, a[t], n_mc, rng)
        ang = _angle_to(u, p.axis)
        f = float(np.mean((ang >= p.theta_lo) & (ang <= p.theta_hi)))
        vol[idx[t]] = cap[t] * f
        se[idx[t]] = cap[t] * math.sqrt(f * (1 - f) / n_mc)
        mc[idx[t]] = True
    return vol, se, mc


def _box_ball_fraction(lo, hi, center, r, rng, n_mc):
    D = center.shape[0]
    vol_box = float(np.prod(hi - lo))
    if np.all(center - r >= lo) and np.all(center + r <= hi):
        return unit_ball_volume(D) * r**D / vol_box, 0.0, False
    if np.any(center + r < lo) or np.any(center - r > hi):
        return 0.0, 0.0, False
    pts = center + _uniform_ball(n_mc, D, r, rng)
    f = float(np.mean(np.all((pts >= lo) & (pts <= hi), axis=1)))
    scale = unit_ball_volume(D) * r**D / vol_box
    return scale * f, scale * math.sqrt(f * (1 - f) / n_mc), True


def ball_masses(model, centers, r, noise=None, seed=0, n_mc=20_000):
    """Vectorised ball masses: arrays (mass, se, monte_carlo) over centres.

    Models exposing their own ``ball_masses`` method (for instance an
    empirical measure) are delegated to.
    """
    noise = NoNoise() if noise is None else noise
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if r < 0:
        raise InvalidArgument("r must be nonnegative")
    m = centers.shape[0]
    if hasattr(model, "ball_masses"):
        return model.ball_masses(centers, r), np.zeros(m), np.zeros(m, dtype=bool)
    if r == 0:
        return np.zeros(m), np.zeros(m), np.zeros(m, dtype=bool)
    rng = np.random.default_rng(seed)
    if isinstance(noise, Additive) and noise.theta > 0:
        pts = sample(model, noise, n_mc, seed).observed
        from .neighbors import DistanceIndex

        f = DistanceIndex(pts).count_within(centers, r) / n_mc
        return f, np.sqrt(f * (1 - f) / n_mc), np.ones(m, dtype=bool)
    mass = np.zeros(m)
    var = np.zeros(m)
    mc = np.zeros(m, dtype=bool)
    for p in model.pieces():
        v, se, used = _piece_ball_volumes(p, centers, r, rng, n_mc)
        mass += p.density * v
        var += (p.density * se) ** 2
        mc |= used
    if isinstance(noise, Clutter):
        lo, hi = noise.box(model)
        fb = np.zeros(m)
        sb = np.zeros(m)
        for t in range(m):
            f, e, used = _box_ball_fraction(lo, hi, centers[t], r, rng, n_mc)
            fb[t], sb[t] = f, e
            mc[t] |= used
        mass = noise.pi * mass + (1 - noise.pi) * fb
        var = noise.pi**2 * var + ((1 - noise.pi) * sb) ** 2
    return np.minimum(mass, 1.0), np.sqrt(var), mc


def ball_mass_oracle(model, center, r, noise=None, seed=0, n_mc=20_000) -> MassResult:
    """Probability of the closed ball B(center, r) under the observed law.

    Exact on pieces the ball does not straddle; Monte Carlo (with standard
    error) on straddled pieces, for the clutter box boundary, and for
    additive noise.
    """
    center = np.asarray(center, dtype=float).reshape(1, -1)
    m, se, mc = ball_masses(model, center, r, noise, seed, n_mc)
    return MassResult(float(m[0]), float(se[0]), bool(mc[0]))
