"""Volumes of balls, caps and covers on spheres embedded in R^D.

The sphere is the only manifold with exact volume oracles here; every mass
computation elsewhere in the package reduces to the cap functions below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import InvalidArgument, NumericFailure, RegimeViolation

__all__ = [
    "SphereSpec",
    "VolumeBounds",
    "unit_ball_volume",
    "sphere_surface_volume",
    "cap_volume_exact",
    "cap_volume",
    "cap_volume_from_angle",
    "cap_volume_series",
    "series_coefficient",
    "ball_volume_bounds",
    "geodesic_distance",
    "covering_number_bound",
    "build_net",
]

QUAD_TOL = 1e-12


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d, pi^(d/2) / Gamma(d/2 + 1)."""
    if int(d) != d or d < 1:
        raise InvalidArgument(f"dimension must be a positive integer, got {d!r}")
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


def sphere_surface_volume(d: int, tau: float) -> float:
    """d-dimensional volume of the sphere S^d of radius tau in R^(d+1)."""
    return (d + 1) * unit_ball_volume(d + 1) * tau**d


@dataclass(frozen=True)
class SphereSpec:
    """A round d-sphere of radius ``tau`` embedded in R^D.

    ``basis`` is a D x (d+1) matrix with orthonormal columns spanning the
    affine (d+1)-plane that contains the sphere.
    """

    d: int
    tau: float
    center: np.ndarray
    basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        basis = np.asarray(self.basis, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "basis", basis)
        if self.d < 1 or int(self.d) != self.d:
            raise InvalidArgument("d must be a positive integer")
        if not self.tau > 0:
            raise InvalidArgument("tau must be positive")
        D = center.shape[0]
        if basis.shape != (D, self.d + 1):
            raise InvalidArgument(
                f"basis must have shape ({D}, {self.d + 1}), got {basis.shape}"
            )
        gram = basis.T @ basis
        if np.max(np.abs(gram - np.eye(self.d + 1))) > 1e-12:
            raise InvalidArgument("basis columns are not orthonormal")

    @classmethod
    def standard(cls, d, tau=1.0, D=None, center=None):
        """Sphere spanned by the first d+1 coordinate axes."""
        D = d + 1 if D is None else D
        if D < d + 1:
            raise InvalidArgument(f"ambient dimension {D} < d + 1 = {d + 1}")
        c = np.zeros(D) if center is None else np.asarray(center, dtype=float)
        return cls(d, float(tau), c, np.eye(D, d + 1))

    @property
    def D(self) -> int:
        return self.center.shape[0]

    @property
    def volume(self) -> float:
        return sphere_surface_volume(self.d, self.tau)

    def from_unit(self, u):
        """Map unit vectors in R^(d+1) to surface points in R^D."""
        return self.center + self.tau * (np.asarray(u) @ self.basis.T)

    def sample(self, n, rng):
        g = rng.standard_normal((n, self.d + 1))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return self.from_unit(g)

    def local(self, x):
        """Split x - center into in-plane coordinates and the off-plane norm."""
        y = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        w = y @ self.basis
        z = y - w @ self.basis.T
        return w, np.linalg.norm(z, axis=1)

    def distance_to_surface(self, x):
        w, zn = self.local(x)
        return np.hypot(np.linalg.norm(w, axis=1) - self.tau, zn)

    def on_surface(self, x, tol=1e-9):
        return self.distance_to_surface(x) <= tol * self.tau

    def polar_angle(self, x, y):
        """Angle at the center between surface points x and y."""
        a, _ = self.local(x)
        b, _ = self.local(y)
        a = a / np.linalg.norm(a, axis=1, keepdims=True)
        b = b / np.linalg.norm(b, axis=1, keepdims=True)
        # atan2 form stays accurate for nearly equal and nearly antipodal pairs
        cross = np.linalg.norm(a - b, axis=1) * np.linalg.norm(a + b, axis=1)
        return np.arctan2(cross, np.sum((a + b) * (a + b), axis=1) - 2.0)

    def cap_angle(self, x, r):
        """Polar half-angle of B(x, r) intersected with the sphere.

        ``x`` may be any ambient point.  Returns -1 for an empty intersection
        and pi when the ball swallows the whole sphere.
        """
        w, zn = self.local(x)
        wn = np.linalg.norm(w, axis=1)
        r = np.broadcast_to(np.asarray(r, dtype=float), wn.shape)
        num = self.tau**2 + wn**2 + zn**2 - r**2
        out = np.empty_like(wn)
        flat = wn <= 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            cos = num / (2.0 * self.tau * wn)
        out[~flat] = np.where(
            cos[~flat] > 1.0,
            -1.0,
            np.arccos(np.clip(cos[~flat], -1.0, 1.0)),
        )
        out[flat] = np.where(num[flat] <= 0.0, math.pi, -1.0)
        return out


def _sin_power_integral(d, theta):
    """int_0^theta sin^(d-1)(t) dt by adaptive Gauss-Kronrod quadrature."""
    if theta == 0.0:
        return 0.0
    val, err = integrate.quad(
        lambda t: math.sin(t) ** (d - 1),
        0.0,
        theta,
        epsabs=0.0,
        epsrel=1e-13,
        limit=200,
    )
    if not math.isfinite(val) or err > QUAD_TOL * abs(val):
        raise NumericFailure(
            f"cap quadrature did not converge (d={d}, theta={theta})", residual=err
        )
    return val


def cap_volume_exact(d: int, tau: float, r: float) -> float:
    """Surface volume of the cap B(x, r) ∩ S^d(tau) for x on the sphere.

    With u = sin^2(t) the incomplete-beta integrand
    u^(d/2-1) (1-u)^(-1/2) du becomes 2 sin^(d-1)(t) dt, which is smooth on
    the whole range; the polar angle 2 arcsin(r / 2 tau) then covers caps
    larger than a hemisphere without a separate branch.
    """
    if r < 0 or r > 2 * tau * (1 + 1e-15):
        raise InvalidArgument(f"chord radius {r} outside [0, 2 tau = {2 * tau}]")
    if r == 0:
        return 0.0
    theta = 2.0 * math.asin(min(1.0, r / (2.0 * tau)))
    vd = unit_ball_volume(d)
    return d * vd * tau**d * _sin_power_integral(d, theta)


def cap_volume_from_angle(d, tau, theta):
    """Vectorised cap volume for polar half-angle ``theta`` in [0, pi].

    Uses the regularised incomplete beta function; negative angles map to 0.
    """
    theta = np.asarray(theta, dtype=float)
    full = sphere_surface_volume(d, tau)
    half = 0.5 * full
    s2 = np.sin(np.clip(theta, 0.0, math.pi)) ** 2
    part = half * special.betainc(0.5 * d, 0.5, s2)
    out = np.where(theta <= 0.5 * math.pi, part, full - part)
    return np.where(theta < 0, 0.0, out)


def cap_volume(d, tau, r):
    """Vectorised counterpart of :func:`cap_volume_exact` (chord radius)."""
    r = np.asarray(r, dtype=float)
    theta = 2.0 * np.arcsin(np.clip(r / (2.0 * tau), 0.0, 1.0))
    return cap_volume_from_angle(d, tau, theta)


def series_coefficient(d: int) -> float:
    """Second-order coefficient d(d-2) / (8(d+2)) of the small-cap expansion."""
    return d * (d - 2) / (8.0 * (d + 2))


def cap_volume_series(d: int, tau: float, r: float) -> float:
    """v_d r^d (1 - c_d r^2/tau^2); the O(r^4/tau^4) remainder is dropped."""
    if r < 0:
        raise InvalidArgument("r must be nonnegative")
    if r > 0.25 * tau:
        raise RegimeViolation(f"series needs r/tau <= 0.25, got {r / tau:.4g}")
    return unit_ball_volume(d) * r**d * (1.0 - series_coefficient(d) * (r / tau) ** 2)


@dataclass(frozen=True)
class VolumeBounds:
    lower: float
    upper: float
    r1: float
    d: int
    tau: float
    r: float

    def epsilon_regime(self, eps: float) -> bool:
        """True iff r <= eps tau / (72 d), where the (1 ± eps/6) sandwich applies."""
        return self.r <= eps * self.tau / (72.0 * self.d)


def ball_volume_bounds(d: int, tau: float, r: float) -> VolumeBounds:
    """Lower/upper bounds on vol_d(B(x, r) ∩ M) for a manifold of reach tau.

    The upper bound is infinite for r >= 3 tau / 8, where tau - 2 r1 <= 0.
    """
    if r <= 0:
        raise InvalidArgument("r must be positive")
    if r >= 0.5 * tau:
        raise RegimeViolation(f"need r < tau/2, got r={r}, tau={tau}")
    vd = unit_ball_volume(d)
    lower = (1.0 - r * r / (4.0 * tau * tau)) ** (0.5 * d) * vd * r**d
    r1 = tau - tau * math.sqrt(1.0 - 2.0 * r / tau)
    gap = tau - 2.0 * r1
    upper = vd * (tau / gap) ** d * r1**d if gap > 0 else math.inf
    return VolumeBounds(lower, upper, r1, d, tau, r)


def geodesic_distance(sphere: SphereSpec, p, q, tol=1e-9) -> float:
    """Great-circle distance 2 tau arcsin(|p - q| / 2 tau)."""
    pts = np.vstack([np.asarray(p, float), np.asarray(q, float)])
    if not np.all(sphere.on_surface(pts, tol)):
        raise InvalidArgument("points are not on the sphere")
    return float(sphere.tau * sphere.polar_angle(pts[:1], pts[1:])[0])


def covering_number_bound(vol_M: float, d: int, tau: float, s: float) -> int:
    """ceil(vol_M / (cos^d(arcsin(s / 4 tau)) v_d (s/2)^d))."""
    if s <= 0:
        raise InvalidArgument("net radius must be positive")
    if s > 2 * tau:
        raise RegimeViolation(f"covering bound needs s <= 2 tau, got s={s}")
    c = math.cos(math.asin(s / (4.0 * tau)))
    val = vol_M / (c**d * unit_ball_volume(d) * (0.5 * s) ** d)
    # guard against 17.000000000000004 style round-up
    return int(math.ceil(val * (1 - 1e-12)))


def farthest_point_order(points, count=None, stop_radius=None, start=0):
    """Greedy farthest-point traversal.

    Returns the selected indices and the covering radius after the last pick.
    Stops when ``count`` points are picked or the covering radius drops to
    ``stop_radius`` or below.
    """
    n = points.shape[0]
    # squared distances; the square root is taken only for the reported radius
    dmin = np.full(n, np.inf)
    diff = np.empty_like(points)
    sq = np.empty(n)
    chosen = []
    cur = start
    while True:
        chosen.append(cur)
        np.subtract(points, points[cur], out=diff)
        np.einsum("ij,ij->i", diff, diff, out=sq)
        np.minimum(dmin, sq, out=dmin)
        cur = int(np.argmax(dmin))
        radius = math.sqrt(float(dmin[cur]))
        if count is not None and len(chosen) >= count:
            break
        if stop_radius is not None and radius <= stop_radius:
            break
        if len(chosen) == n:
            break
    return np.asarray(chosen), radius


def build_net(sphere: SphereSpec, s: float, seed: int, n_candidates: int | None = None):
    """Greedy s-net over a dense random sample of the sphere.

    Every candidate point ends up within chord distance s of a net point, and
    net points are pairwise more than s apart.
    """
    if s <= 0:
        raise InvalidArgument("net radius must be positive")
    if s >= 2 * sphere.tau:
        return sphere.from_unit(np.eye(1, sphere.d + 1))
    if n_candidates is None:
        bound = covering_number_bound(sphere.volume, sphere.d, sphere.tau, min(s, 2 * sphere.tau))
        n_candidates = int(min(200_000, max(4000, 40 * bound)))
    rng = np.random.default_rng(seed)
    cand = sphere.sample(n_candidates, rng)
    idx, _ = farthest_point_order(cand, stop_radius=s)
    return cand[idx]
