"""Shooting for rotationally symmetric self-expanders with a neck on {z = 0}.

The profile starts at (r0, 0) with a vertical tangent and is integrated in
arc length.  Its asymptotic cone r = delta |z| defines the shooting map
r0 -> delta(r0), whose interior minimum is the fold value delta_star.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .errors import (AxisCollision, Blowup, BracketError, ExpanderLabError, FitUnreliable,
                     FoldProximity, InvalidProfile)
from .geometry import ProfileCurve, SurfaceDiagnostics, curvature, expander_residual, surface_diagnostics

__all__ = [
    "ShootingOptions",
    "RotationalExpander",
    "ShootingMapSample",
    "DeltaStar",
    "expander_rhs",
    "integrate_profile",
    "asymptotic_slope",
    "slope_of",
    "solve_expander",
    "shooting_map",
    "write_sweep_csv",
    "grid_minimum",
    "find_delta_star",
    "find_branches",
]

AXIS_EPS = 1e-6


@dataclass(frozen=True)
class ShootingOptions:
    """Integration and fitting settings shared by the shooting routines."""

    s_max: float = 12.0
    step: float = 1e-3
    rtol: float = 1e-12
    atol: float = 1e-12
    method: str = "DOP853"
    R_fit: float = 8.0
    fit_degree: int = 3
    solve_tol: float = 1e-8


DEFAULT = ShootingOptions()


def expander_rhs(s, y, n):
    r, z, th = y
    st, ct = np.sin(th), np.cos(th)
    return np.array([ct, st, 0.5 * (z * ct - r * st) - (n - 1) * st / r])


def _axis_event(s, y, n):
    return y[0] - AXIS_EPS


_axis_event.terminal = True
_axis_event.direction = -1


def _low_event(s, y, n):
    return y[2] + 0.5 * math.pi


_low_event.terminal = True


def _high_event(s, y, n):
    return y[2] - math.pi


_high_event.terminal = True


def auto_step(r0, base):
    """Sample step for neck radius r0: base halved until it is below r0/300, at most 3 times.

    Curvature at the neck is of order 1/r0 and the finite-difference residual
    certificate needs the neck resolved.
    """
    step = base
    for _ in range(3):
        if step <= r0 / 300:
            break
        step *= 0.5
    return step


def integrate_profile(r0, n=2, s_max=None, step=None, options: ShootingOptions = DEFAULT) -> ProfileCurve:
    """Integrate the expander profile ODE from the neck (r0, 0) with theta = pi/2.

    Returns the half-profile on [0, s_max] sampled every ``step`` (by default
    auto_step(r0, options.step)).  Raises
    AxisCollision if r reaches zero and Blowup if the tangent angle leaves
    (-pi/2, pi); both carry the partial profile when one can be formed.
    """
    if not (r0 > 0 and math.isfinite(r0)):
        raise ValueError("r0 must be positive")
    if n < 2:
        raise ValueError("n must be at least 2")
    s_max = options.s_max if s_max is None else float(s_max)
    step = auto_step(r0, options.step) if step is None else float(step)
    N = int(round(s_max / step))
    if N < 4 or abs(N * step - s_max) > 1e-9 * s_max:
        raise ValueError("s_max must be a multiple of step")
    s = np.arange(N + 1) * step
    sol = solve_ivp(expander_rhs, (0.0, s[-1]), [r0, 0.0, 0.5 * math.pi], method=options.method,
                    rtol=options.rtol, atol=options.atol, args=(n,), t_eval=s,
                    events=(_axis_event, _low_event, _high_event))
    if sol.status == -1:
        raise Blowup(f"integrator failed: {sol.message}")
    if sol.status == 1:
        k = sol.y.shape[1]
        partial = None
        if k >= 3:
            try:
                partial = ProfileCurve(n, s[:k], sol.y[0], sol.y[1], sol.y[2], step)
            except InvalidProfile:
                partial = None
        if sol.t_events[0].size:
            raise AxisCollision(f"profile reached the axis at s={sol.t_events[0][0]:.6g}", partial)
        where = sol.t_events[1] if sol.t_events[1].size else sol.t_events[2]
        raise Blowup(f"tangent angle left (-pi/2, pi) at s={where[0]:.6g}", partial)
    return ProfileCurve(n, s, sol.y[0], sol.y[1], sol.y[2], step)


def asymptotic_slope(profile: ProfileCurve, R_fit=8.0, degree=3, min_samples=50):
    """Fit the asymptotic cone slope delta = lim r/z on the outer window.

    r/z is fitted as a polynomial in t = (R_fit/|x|)^2 over |x| >= R_fit and
    extrapolated to t = 0.  The error estimate is the spread of the
    extrapolated value over neighbouring windows and degrees.
    """
    def fit(R, deg):
        x2 = profile.x2
        m = (x2 >= R * R) & (profile.s >= 0)
        if np.count_nonzero(m) < max(min_samples, deg + 2):
            raise FitUnreliable(f"only {np.count_nonzero(m)} samples beyond |x| = {R}")
        z = profile.z[m]
        if np.min(np.abs(z)) < 1e-8 * R or np.ptp(np.sign(z)) > 0:
            raise FitUnreliable("outer window meets the plane z = 0; no cone around the axis")
        q = profile.r[m] / np.abs(z)
        t = R * R / x2[m]
        if np.ptp(t) < 0.05:
            raise FitUnreliable("outer window too short for extrapolation")
        coef = np.polynomial.polynomial.polyfit(t, q, deg)
        return float(coef[0])

    delta = fit(R_fit, degree)
    alts = []
    for R, deg in ((R_fit - 1.0, degree), (R_fit + 1.0, degree), (R_fit, degree - 1), (R_fit, degree + 1)):
        if R <= 0 or deg < 1:
            continue
        try:
            alts.append(fit(R, deg))
        except FitUnreliable:
            pass
    err = max((abs(a - delta) for a in alts), default=float("nan"))
    return delta, err


def slope_of(r0, n=2, options: ShootingOptions = DEFAULT):
    """delta(r0) from integration plus asymptotic fit."""
    prof = integrate_profile(r0, n, options=options)
    return asymptotic_slope(prof, options.R_fit, options.fit_degree)[0]


class CertificateFailure(ExpanderLabError):
    """A computed profile does not pass its residual certificate."""


@dataclass(frozen=True)
class RotationalExpander:
    """A solved annular self-expander; ``profile`` is the half z >= 0."""

    profile: ProfileCurve
    r0: float
    n: int
    delta_fit: float
    fit_error: float
    residual_sup: float
    diagnostics: SurfaceDiagnostics
    options: ShootingOptions = field(default=DEFAULT, repr=False)

    @property
    def full_profile(self) -> ProfileCurve:
        return self.profile.mirrored()

    def to_json(self):
        d = self.profile.to_json()
        d.update({
            "r0": self.r0,
            "delta": self.delta_fit,
            "fit_error": self.fit_error,
            "residual_sup": self.residual_sup,
            "K_Sigma": self.diagnostics.K_Sigma,
            "R0": self.diagnostics.R0,
            "C0": self.diagnostics.C0,
        })
        return d

    @classmethod
    def from_json(cls, data, options: ShootingOptions = DEFAULT):
        prof = ProfileCurve.from_json(data)
        return certify(prof, options)


def certify(profile: ProfileCurve, options: ShootingOptions = DEFAULT) -> RotationalExpander:
    """Check an expander half-profile and attach its metadata."""
    if abs(profile.z[0]) > 1e-10 or abs(profile.theta[0] - 0.5 * math.pi) > 1e-10:
        raise InvalidProfile("expander half-profile must start on z = 0 with a vertical tangent")
    curv = curvature(profile)
    res = expander_residual(profile, curv)
    if not res.sup < options.solve_tol:
        raise CertificateFailure(f"expander residual {res.sup:.3g} exceeds {options.solve_tol:.3g}")
    delta, err = asymptotic_slope(profile, options.R_fit, options.fit_degree)
    return RotationalExpander(profile, float(profile.r[0]), profile.n, delta, err, res.sup,
                              surface_diagnostics(profile, curv), options)


def solve_expander(r0, n=2, options: ShootingOptions = DEFAULT) -> RotationalExpander:
    return certify(integrate_profile(r0, n, options=options), options)


@dataclass(frozen=True)
class ShootingMapSample:
    r0: float
    delta: float
    sensitivity: float
    fit_error: float = float("nan")
    residual_sup: float = float("nan")
    s_max: float = float("nan")
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


def _sample(args):
    r0, n, options, dr = args
    try:
        exp = solve_expander(r0, n, options)
        h = dr * r0
        dp = slope_of(r0 + h, n, options)
        dm = slope_of(r0 - h, n, options)
        return ShootingMapSample(r0, exp.delta_fit, (dp - dm) / (2 * h), exp.fit_error,
                                 exp.residual_sup, options.s_max)
    except ExpanderLabError as exc:
        return ShootingMapSample(r0, float("nan"), float("nan"), error=f"{type(exc).__name__}: {exc}")


def shooting_map(r0_grid, n=2, options: ShootingOptions = DEFAULT, workers=1, rel_dr=1e-4):
    """delta(r0) with a central-difference sensitivity at each grid point.

    Failures are recorded on the sample instead of aborting the sweep.
    """
    jobs = [(float(r), n, options, rel_dr) for r in r0_grid]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sample, jobs))
    return [_sample(j) for j in jobs]


def write_sweep_csv(samples, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r0", "delta", "fit_error", "residual_sup", "s_max"])
        for p in samples:
            w.writerow([repr(p.r0), repr(p.delta), repr(p.fit_error), repr(p.residual_sup), repr(p.s_max)])


def grid_minimum(r0, delta):
    """Interior minimiser of sampled delta(r0) refined by a three-point parabola.

    Returns None when the smallest sample sits on the grid boundary.
    """
    r0 = np.asarray(r0, float)
    delta = np.asarray(delta, float)
    ok = np.isfinite(delta)
    r0, delta = r0[ok], delta[ok]
    i = int(np.argmin(delta))
    if i == 0 or i == delta.size - 1:
        return None
    x0, x1, x2 = r0[i - 1:i + 2]
    y0, y1, y2 = delta[i - 1:i + 2]
    num = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    xm = x1 - 0.5 * num / den
    # value of the interpolating parabola at its vertex
    c = np.polyfit([x0, x1, x2], [y0, y1, y2], 2)
    return float(xm), float(np.polyval(c, xm))


@dataclass(frozen=True)
class DeltaStar:
    delta_star: float
    r0_star: float
    golden: tuple
    parabolic: tuple
    agreement: float
    converged: bool


def find_delta_star(n=2, bracket=(0.3, 2.0), delta_fn=None, options: ShootingOptions = DEFAULT,
                    xtol=1e-7, probe=9):
    """Minimise delta(r0) inside ``bracket`` by golden section and by Brent's method.

    ``delta_fn`` replaces the shooting map (useful for synthetic maps).  The
    bracket is probed on a coarse grid first; a minimum on its boundary means
    there is no interior fold there and raises BracketError.
    """
    f = delta_fn if delta_fn is not None else (lambda r: slope_of(r, n, options))
    a, b = float(bracket[0]), float(bracket[1])
    if not 0 < a < b:
        raise BracketError("bracket must satisfy 0 < a < b")
    xs = np.linspace(a, b, probe)
    ys = np.array([f(x) for x in xs])
    i = int(np.argmin(ys))
    if i == 0 or i == probe - 1:
        raise BracketError(f"delta(r0) has no interior minimum in [{a}, {b}]")
    lo, mid, hi = xs[i - 1], xs[i], xs[i + 1]
    g = minimize_scalar(f, bracket=(lo, mid, hi), method="golden", tol=xtol)
    p = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    agreement = abs(g.fun - p.fun)
    best = g if g.fun <= p.fun else p
    converged = bool(lo < best.x < hi and getattr(p, "success", True))
    return DeltaStar(float(best.fun), float(best.x), (float(g.fun), float(g.x)), (float(p.fun), float(p.x)),
                     float(agreement), converged)


_SCAN_CACHE = {}


def _scan(n, window, points, options):
    key = (n, window, points, options)
    if key not in _SCAN_CACHE:
        grid = np.geomspace(window[0], window[1], points)
        vals = []
        for r in grid:
            try:
                vals.append(slope_of(r, n, options))
            except ExpanderLabError:
                vals.append(float("nan"))
        _SCAN_CACHE[key] = (grid, np.array(vals))
    return _SCAN_CACHE[key]


def find_branches(delta, n=2, window=(1e-2, 10.0), points=48, options: ShootingOptions = DEFAULT,
                  delta_star=None, fold_guard=1e-6, root_tol=1e-8):
    """All waist radii r0 in ``window`` with delta(r0) = delta, as certified expanders.

    Sign changes on a logarithmic grid are polished with Brent's method.  Grid
    cells around local minima are searched for a dip below ``delta`` so that
    pairs of roots closer than the grid spacing are not missed.  If
    ``delta_star`` is given and |delta - delta_star| < fold_guard, FoldProximity
    is raised since the roots are then ill-conditioned.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if delta_star is not None and abs(delta - delta_star) < fold_guard:
        raise FoldProximity(f"delta={delta} is within {fold_guard:g} of the fold {delta_star}",
                            delta, delta_star, (delta_star - 10 * fold_guard, delta_star + 10 * fold_guard))
    grid, vals = _scan(n, tuple(window), points, options)
    f = lambda r: slope_of(r, n, options) - delta
    brackets = []
    g = vals - delta
    for i in range(len(grid) - 1):
        if np.isfinite(g[i]) and np.isfinite(g[i + 1]) and g[i] * g[i + 1] < 0:
            brackets.append((grid[i], grid[i + 1]))
    for i in range(1, len(grid) - 1):
        if not np.all(np.isfinite(g[i - 1:i + 2])):
            continue
        if g[i] <= g[i - 1] and g[i] <= g[i + 1] and g[i] > 0:
            m = minimize_scalar(f, bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                                options={"xatol": 1e-9})
            if m.fun < 0:
                brackets = [br for br in brackets if not (grid[i - 1] <= br[0] < grid[i + 1])]
                brackets += [(grid[i - 1], m.x), (m.x, grid[i + 1])]
    out = []
    for lo, hi in sorted(brackets):
        r = brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
        exp = solve_expander(r, n, options)
        if abs(exp.delta_fit - delta) >= root_tol:
            warnings.warn(f"root at r0={r:.10g} only reaches |delta - target| = {abs(exp.delta_fit - delta):.2e}")
        out.append(exp)
    return out
