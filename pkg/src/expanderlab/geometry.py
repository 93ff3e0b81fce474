"""Rotationally symmetric hypersurfaces described by their profile curves.

A hypersurface of revolution in R^{n+1} is generated by a unit-speed curve
s -> (r(s), z(s)) in the half-plane r > 0, with tangent (cos theta, sin theta)
and unit normal (-sin theta, cos theta).  With this orientation the scalar
mean curvature is

    H = -(kappa_prof + (n - 1) kappa_rot),   kappa_prof = theta',
                                             kappa_rot  = sin(theta) / r,

so that the mean curvature vector is -H n.  Self-expanders satisfy
H + (x.n)/2 = 0 and self-shrinkers H - (x.n)/2 = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import DivergentNorm, InvalidProfile

__all__ = [
    "ProfileCurve",
    "CurvatureData",
    "SurfaceDiagnostics",
    "WeightedGrid",
    "ResidualReport",
    "sphere_area",
    "simpson_weights",
    "curvature",
    "expander_residual",
    "shrinker_residual",
    "weighted_norm",
    "tail_grows",
    "surface_diagnostics",
    "hyperplane_profile",
    "cylinder_profile",
    "cone_profile",
    "circle_profile",
]


def sphere_area(k):
    """Area of the unit k-sphere in R^{k+1}."""
    return math.exp(math.log(2.0) + 0.5 * (k + 1) * math.log(math.pi) - gammaln(0.5 * (k + 1)))


def simpson_weights(num_intervals, h):
    """Composite Simpson weights on ``num_intervals + 1`` equispaced nodes.

    An odd interval count closes with the 3/8 rule on the last three
    intervals; a single interval falls back to the trapezoid rule.
    """
    N = int(num_intervals)
    if N < 1:
        raise ValueError("need at least one interval")
    w = np.zeros(N + 1)
    if N == 1:
        w[:] = 0.5 * h
        return w
    if N % 2 == 0:
        w[0:N + 1:2] = 2.0
        w[1:N:2] = 4.0
        w[0] = w[N] = 1.0
        return w * h / 3.0
    m = N - 3
    if m > 0:
        w[0:m + 1:2] = 2.0
        w[1:m:2] = 4.0
        w[0] = 1.0
        w[m] = 1.0
        w[: m + 1] *= h / 3.0
    w[m] += 3.0 * h / 8.0
    w[m + 1] += 9.0 * h / 8.0
    w[m + 2] += 9.0 * h / 8.0
    w[m + 3] += 3.0 * h / 8.0
    return w


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProfileCurve:
    """Arc-length sampled generating curve of a hypersurface of revolution.

    ``n`` is the hypersurface dimension (ambient space R^{n+1}).  Samples are
    stored as parallel arrays; ``theta`` is the tangent angle measured from
    the positive r-axis and is kept continuous (unwrapped).
    """

    n: int
    s: np.ndarray
    r: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    step: float
    closed: bool = False
    speed_tol: float = field(default=1e-2, repr=False, compare=False)

    def __post_init__(self):
        for name in ("s", "r", "z", "theta"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.n < 1:
            raise InvalidProfile("dimension n must be positive")
        size = self.s.size
        if size < 3 or any(getattr(self, a).size != size for a in ("r", "z", "theta")):
            raise InvalidProfile("profile needs at least three samples of equal length")
        if not np.all(np.isfinite(self.r)) or np.any(self.r <= 0.0):
            raise InvalidProfile("profile touches or crosses the axis (r <= 0)")
        ds = np.diff(self.s)
        if np.any(ds <= 0.0):
            raise InvalidProfile("arc length must be strictly increasing")
        if np.max(np.abs(ds - self.step)) > 0.01 * self.step:
            raise InvalidProfile("arc-length spacing deviates from the nominal step by more than 1%")
        chord_r = np.diff(self.r) / ds
        chord_z = np.diff(self.z) / ds
        mid = 0.5 * (self.theta[1:] + self.theta[:-1])
        err = np.hypot(chord_r - np.cos(mid), chord_z - np.sin(mid))
        bend = np.diff(self.theta) / ds
        allowed = self.speed_tol * self.step + self.step ** 2 * bend ** 2
        if np.any(err > allowed):
            i = int(np.argmax(err - allowed))
            raise InvalidProfile(f"profile is not unit speed near s={self.s[i]:.6g} (chord error {err[i]:.3g})")

    # -- derived pointwise quantities -------------------------------------

    @property
    def size(self):
        return self.s.size

    @property
    def x2(self):
        return self.r ** 2 + self.z ** 2

    @property
    def radius(self):
        return np.sqrt(self.x2)

    @property
    def xdotn(self):
        return -self.r * np.sin(self.theta) + self.z * np.cos(self.theta)

    @property
    def xdotT(self):
        return self.r * np.cos(self.theta) + self.z * np.sin(self.theta)

    @property
    def log_area_density(self):
        """log of omega_{n-1} r^{n-1}, the area element per unit arc length."""
        return math.log(sphere_area(self.n - 1)) + (self.n - 1) * np.log(self.r)

    def quadrature_weights(self):
        """Simpson weights in arc length (no area or Gaussian factor)."""
        return simpson_weights(self.size - 1, self.step)

    # -- construction helpers ---------------------------------------------

    def mirrored(self):
        """Reflect a half-profile starting on {z = 0} through that plane.

        The result covers [-s_max, s_max] with the waist at s = 0.
        """
        if abs(self.s[0]) > 1e-12 or abs(self.z[0]) > 1e-12:
            raise InvalidProfile("only profiles starting at s = 0 on z = 0 can be mirrored")
        s = np.concatenate([-self.s[:0:-1], self.s])
        r = np.concatenate([self.r[:0:-1], self.r])
        z = np.concatenate([-self.z[:0:-1], self.z])
        th = np.concatenate([math.pi - self.theta[:0:-1], self.theta])
        return ProfileCurve(self.n, s, r, z, th, self.step, speed_tol=self.speed_tol)

    def restrict(self, s_min, s_max):
        keep = (self.s >= s_min - 1e-9 * self.step) & (self.s <= s_max + 1e-9 * self.step)
        return ProfileCurve(self.n, self.s[keep], self.r[keep], self.z[keep], self.theta[keep],
                            self.step, speed_tol=self.speed_tol)

    def subsample(self, every):
        """Keep every ``every``-th sample (nominal step scales accordingly)."""
        sl = slice(None, None, int(every))
        return ProfileCurve(self.n, self.s[sl], self.r[sl], self.z[sl], self.theta[sl],
                            self.step * every, speed_tol=self.speed_tol)

    def to_json(self):
        return {
            "n": int(self.n),
            "step": float(self.step),
            "samples": [
                {"s": float(a), "r": float(b), "z": float(c), "theta": float(d)}
                for a, b, c, d in zip(self.s, self.r, self.z, self.theta)
            ],
        }

    @classmethod
    def from_json(cls, data):
        try:
            samples = data["samples"]
            return cls(
                int(data["n"]),
                [p["s"] for p in samples],
                [p["r"] for p in samples],
                [p["z"] for p in samples],
                [p["theta"] for p in samples],
                float(data["step"]),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidProfile(f"malformed profile JSON: {exc}") from exc


def hyperplane_profile(n=2, r_min=0.5, r_max=6.0, step=1e-3):
    """The plane {z = 0} traversed outward from radius ``r_min``."""
    N = int(round((r_max - r_min) / step))
    s = np.arange(N + 1) * step
    return ProfileCurve(n, s, r_min + s, np.zeros_like(s), np.zeros_like(s), step)


def cylinder_profile(c, n=2, z_min=-3.0, z_max=3.0, step=1e-3):
    N = int(round((z_max - z_min) / step))
    s = np.arange(N + 1) * step
    return ProfileCurve(n, s, np.full_like(s, c), z_min + s, np.full_like(s, 0.5 * math.pi), step)


def cone_profile(delta, n=2, rho_min=0.5, rho_max=12.0, step=1e-3):
    """Upper nappe of the cone r = delta z, parameterised by |x|."""
    N = int(round((rho_max - rho_min) / step))
    s = np.arange(N + 1) * step
    rho = rho_min + s
    th = math.atan2(1.0, delta)
    return ProfileCurve(n, s, rho * math.cos(th), rho * math.sin(th), np.full_like(s, th), step)


def circle_profile(radius, center=(0.0, 0.0), n=2, phi_min=-0.5 * math.pi + 0.05,
                   phi_max=0.5 * math.pi - 0.05, step=1e-3):
    """Counter-clockwise arc of a circle in the (r, z) half-plane.

    With ``center = (0, 0)`` this generates a round sphere; its normal points
    toward the centre.
    """
    N = int(round(radius * (phi_max - phi_min) / step))
    h = radius * (phi_max - phi_min) / N
    s = np.arange(N + 1) * h
    phi = phi_min + s / radius
    r = center[0] + radius * np.cos(phi)
    z = center[1] + radius * np.sin(phi)
    return ProfileCurve(n, s, r, z, phi + 0.5 * math.pi, h)


@dataclass(frozen=True)
class CurvatureData:
    """Pointwise curvature of a profile's hypersurface of revolution."""

    kappa_prof: np.ndarray
    kappa_rot: np.ndarray
    normA2: np.ndarray
    H: np.ndarray
    xdotn: np.ndarray
    xdotT: np.ndarray
    kappa_prof_alt: np.ndarray
    discrepancy: float


def _d1_fourth_order(f, h):
    """First derivative, fourth order inside, second order at the two end pairs."""
    d = np.gradient(f, h, edge_order=2)
    if f.size >= 5:
        d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    return d


def curvature(profile: ProfileCurve) -> CurvatureData:
    """Curvature of the hypersurface generated by ``profile``.

    The profile curvature comes from differentiating theta; an independent
    estimate from second differences of (r, z) is kept for cross-checking.
    """
    h = profile.step
    th = profile.theta
    kappa = _d1_fourth_order(th, h)
    r1 = np.gradient(profile.r, h, edge_order=2)
    z1 = np.gradient(profile.z, h, edge_order=2)
    r2 = np.gradient(r1, h, edge_order=2)
    z2 = np.gradient(z1, h, edge_order=2)
    r2[1:-1] = (profile.r[2:] - 2 * profile.r[1:-1] + profile.r[:-2]) / h ** 2
    z2[1:-1] = (profile.z[2:] - 2 * profile.z[1:-1] + profile.z[:-2]) / h ** 2
    alt = (r1 * z2 - z1 * r2) / np.hypot(r1, z1) ** 3
    inner = slice(2, -2) if profile.size > 6 else slice(None)
    disc = float(np.max(np.abs(alt[inner] - kappa[inner])))
    krot = np.sin(th) / profile.r
    n = profile.n
    H = -(kappa + (n - 1) * krot)
    return CurvatureData(
        kappa_prof=kappa,
        kappa_rot=krot,
        normA2=kappa ** 2 + (n - 1) * krot ** 2,
        H=H,
        xdotn=profile.xdotn,
        xdotT=profile.xdotT,
        kappa_prof_alt=alt,
        discrepancy=disc,
    )


@dataclass(frozen=True)
class WeightedGrid:
    """Quadrature for integrals over the hypersurface against e^{beta |x|^2}.

    Weights are held as logarithms so that large radii never overflow; the
    per-sample weight is omega_{n-1} r^{n-1} e^{beta |x|^2} times the Simpson
    arc-length weight.
    """

    beta: float
    log_weights: np.ndarray

    @classmethod
    def on(cls, profile: ProfileCurve, beta: float):
        lw = profile.log_area_density + beta * profile.x2 + np.log(profile.quadrature_weights())
        return cls(float(beta), _readonly(lw))

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def integrate(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.log_weights.size:
            raise ValueError("sample count does not match the grid")
        c = float(np.max(self.log_weights))
        return math.exp(c) * float(np.sum(np.exp(self.log_weights - c) * values, axis=-1))


@dataclass(frozen=True)
class ResidualReport:
    values: np.ndarray
    sup: float
    weighted_l2: float


def expander_residual(profile: ProfileCurve, curv: CurvatureData | None = None) -> ResidualReport:
    """Pointwise H + (x.n)/2, which vanishes exactly on self-expanders."""
    curv = curvature(profile) if curv is None else curv
    res = curv.H + 0.5 * curv.xdotn
    inner = res[2:-2] if res.size > 6 else res
    grid = WeightedGrid.on(profile, 0.25)
    return ResidualReport(res, float(np.max(np.abs(inner))), math.sqrt(max(grid.integrate(res ** 2), 0.0)))


def shrinker_residual(profile: ProfileCurve, curv: CurvatureData | None = None) -> ResidualReport:
    """Pointwise H - (x.n)/2, which vanishes exactly on self-shrinkers."""
    curv = curvature(profile) if curv is None else curv
    res = curv.H - 0.5 * curv.xdotn
    inner = res[2:-2] if res.size > 6 else res
    grid = WeightedGrid.on(profile, -0.25)
    return ResidualReport(res, float(np.max(np.abs(inner))), math.sqrt(max(grid.integrate(res ** 2), 0.0)))


def tail_grows(profile, density, window=0.15):
    """True if the weighted integrand increases across the outer window.

    ``density`` is the log of the integrand per unit arc length.  Both ends of
    the profile are examined; a divergent weighted norm shows up as a density
    that is still growing where the samples stop.
    """
    k = max(int(window * profile.size), 3)
    outer = profile.radius
    ends = []
    if outer[-1] > outer[0]:
        ends.append(density[-k:])
    if outer[0] > outer[-1] or profile.closed is False and abs(profile.s[0]) > 0 and outer[0] >= outer[k]:
        ends.append(density[:k][::-1])
    for seg in ends:
        seg = seg[np.isfinite(seg)]
        if seg.size >= 3 and seg[-1] > seg[0] + 1.0:
            return True
    return False


def weighted_norm(profile: ProfileCurve, values, grad, beta, order=0, hess=None, mode=0,
                  strict=True):
    """Weighted Sobolev norm with weight e^{beta |x|^2}.

    ``values``, ``grad`` and the optional ``hess`` are the function and its
    first two arc-length derivatives along the profile (for a rotationally
    symmetric function, or the radial factor of a mode-``mode`` harmonic
    normalised to unit mean square on the sphere).  The squared norm sums
    |nabla^i f|^2 for i <= ``order``.
    """
    values = np.asarray(values, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if values.shape != profile.s.shape or grad.shape != profile.s.shape:
        raise ValueError("function samples do not match the profile")
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    lam = mode * (mode + profile.n - 2)
    r = profile.r
    dens = values ** 2
    if order >= 1:
        dens = dens + grad ** 2 + lam * values ** 2 / r ** 2
    if order == 2:
        hess = np.gradient(grad, profile.step, edge_order=2) if hess is None else np.asarray(hess, float)
        ct = np.cos(profile.theta)
        # Hessian of f(s) Y(omega): normal-direction part f'', rotational part f' cos(theta)/r
        dens = dens + hess ** 2 + (profile.n - 1) * (grad * ct / r) ** 2
        if lam:
            dens = dens + 2 * lam * ((grad - values * ct / r) / r) ** 2 + lam * (lam - profile.n + 2) * (values / r ** 2) ** 2
    grid = WeightedGrid.on(profile, beta)
    if strict:
        with np.errstate(divide="ignore"):
            logd = np.log(dens) + profile.log_area_density + beta * profile.x2
        if tail_grows(profile, logd):
            raise DivergentNorm(f"weighted integrand grows in the far field at beta={beta}")
    return math.sqrt(max(grid.integrate(dens), 0.0))


@dataclass(frozen=True)
class SurfaceDiagnostics:
    """Far-field constants of a weakly conical end.

    ``K_Sigma = sup (1 + |x|^2) |A|^2``; beyond radius ``R0`` the discrete
    estimates ||grad r| - 1| <= C0 r^-4, |Hess r^2 - 2g| <= C0 r^-2 and
    |A|^2 <= C0 r^-2 hold with C0 r^-4 <= 1/4 and C0 r^-2 <= 1/4.
    """

    K_Sigma: float
    R0: float
    C0: float


def surface_diagnostics(profile: ProfileCurve, curv: CurvatureData | None = None,
                        min_radius=1.0) -> SurfaceDiagnostics:
    curv = curvature(profile) if curv is None else curv
    inner = slice(2, -2)
    rad = profile.radius[inner]
    A2 = curv.normA2[inner]
    K = float(np.max((1.0 + rad ** 2) * A2))
    grad_r = np.abs(curv.xdotT[inner]) / rad
    hess_dev = 2.0 * np.abs(curv.xdotn[inner]) * np.sqrt(A2)
    need = np.maximum.reduce([np.abs(grad_r - 1.0) * rad ** 4, hess_dev * rad ** 2, A2 * rad ** 2])
    order = np.argsort(rad)[::-1]
    # running sup of the required constant over {|x| >= R}, scanning inward
    running = np.maximum.accumulate(need[order])
    radii = rad[order]
    ok = (running <= 0.25 * radii ** 2) & (running <= 0.25 * radii ** 4) & (radii >= min_radius)
    # the admissible set is {|x| > R0}; take the smallest radius whose whole exterior passes
    bad = np.nonzero(~ok)[0]
    first_bad = bad[0] if bad.size else radii.size
    if first_bad == 0:
        return SurfaceDiagnostics(K, float("inf"), float("nan"))
    idx = first_bad - 1
    return SurfaceDiagnostics(K, float(radii[idx]), float(running[idx]))
