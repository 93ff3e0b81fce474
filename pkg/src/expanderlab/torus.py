"""Angenent's self-shrinking torus, its barrier constants and the self-similar avoidance test.

The shrinker profile solves theta' = (r sin theta - z cos theta)/2 - (n-1) sin theta / r,
the same system as for expanders with the sign of the position term flipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .errors import BracketError, PreconditionError
from .geometry import ProfileCurve, curvature, shrinker_residual
from .shooting import RotationalExpander

__all__ = [
    "ShrinkerTorus",
    "BarrierParams",
    "BarrierReport",
    "AvoidanceReport",
    "shrinker_rhs",
    "integrate_shrinker_torus",
    "compute_delta0",
    "avoidance_check",
    "nappe_profile",
    "barrier_eval",
    "barrier_fd_residual",
    "barrier_region_check",
]


def shrinker_rhs(s, y, n):
    r, z, th = y
    st, ct = np.sin(th), np.cos(th)
    return np.array([ct, st, 0.5 * (r * st - z * ct) - (n - 1) * st / r])


def _crossing(s, y, n):
    return y[1]


_crossing.terminal = True
_crossing.direction = -1


def _axis(s, y, n):
    return y[0] - 1e-6


_axis.terminal = True


def _half_orbit(r_start, n, rtol, s_end=60.0):
    """Integrate from (r_start, 0, pi/2) to the next downward crossing of z = 0.

    Returns (cos theta at the crossing, crossing arc length, r at crossing) or
    None if the curve hits the axis first.
    """
    sol = solve_ivp(shrinker_rhs, (0.0, s_end), [r_start, 0.0, 0.5 * math.pi], method="DOP853",
                    rtol=rtol, atol=rtol, args=(n,), events=(_crossing, _axis))
    if sol.t_events[1].size or sol.t_events[0].size == 0:
        return None
    y = sol.y_events[0][0]
    if y[0] <= 1e-3:
        return None
    return math.cos(y[2]), float(sol.t_events[0][0]), float(y[0])


@dataclass(frozen=True)
class ShrinkerTorus:
    profile: ProfileCurve
    r_start: float
    half_period: float
    Rminus: float
    Rplus: float
    delta0: float
    delta0_refined: float
    closure_gap: float
    residual_sup: float

    def to_json(self):
        d = self.profile.to_json()
        d.update({"Rminus": self.Rminus, "Rplus": self.Rplus, "delta0": self.delta0,
                  "delta0_refined": self.delta0_refined, "r_start": self.r_start,
                  "closure_gap": self.closure_gap, "residual_sup": self.residual_sup})
        return d


def integrate_shrinker_torus(n=2, bracket=None, step=1e-3, rtol=1e-12, scan=40):
    """Angenent torus by shooting on the outer radius r_start.

    The half-orbit from (r_start, 0) with vertical tangent must meet z = 0 again
    with a vertical tangent.  Without ``bracket``, r_start is scanned over
    (1.05, 2.5) * sqrt(2n); orbits that run into the axis (the round sphere
    r_start = sqrt(2n) is one) are discarded.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    root2n = math.sqrt(2 * n)
    g = lambda r: (_half_orbit(r, n, rtol) or (math.nan,))[0]
    if bracket is None:
        grid = np.linspace(1.05 * root2n, 2.5 * root2n, scan)
        vals = np.array([g(r) for r in grid])
        ok = np.isfinite(vals[:-1]) & np.isfinite(vals[1:]) & (vals[:-1] * vals[1:] < 0)
        hits = np.nonzero(ok)[0]
        if hits.size == 0:
            raise BracketError("no closing radius found in the default scan")
        bracket = (grid[hits[0]], grid[hits[0] + 1])
    a, b = bracket
    ga, gb = g(a), g(b)
    if not (np.isfinite(ga) and np.isfinite(gb) and ga * gb < 0):
        raise BracketError(f"no closing radius in [{a}, {b}]")
    r_start = brentq(g, a, b, xtol=1e-15, rtol=1e-15, maxiter=200)
    _, S, _ = _half_orbit(r_start, n, rtol)
    period = 2.0 * S
    N = int(math.ceil(period / step))
    N += N % 2
    h = period / N
    s = np.linspace(0.0, period, N + 1)
    sol = solve_ivp(shrinker_rhs, (0.0, period), [r_start, 0.0, 0.5 * math.pi], method="DOP853",
                    rtol=rtol, atol=rtol, args=(n,), t_eval=s)
    r, z, th = sol.y
    gap = math.hypot(r[-1] - r[0], z[-1] - z[0])
    prof = ProfileCurve(n, s, r, z, th, h, closed=True)
    res = shrinker_residual(prof)
    rho = prof.radius
    d0 = compute_delta0(prof)
    return ShrinkerTorus(prof, float(r_start), float(S), float(rho.min()), float(rho.max()), d0, d0,
                         float(gap), res.sup)


def compute_delta0(torus, return_point=False):
    """min r/|z| over the profile, refined by a parabola through the three best samples.

    With ``return_point`` the refined (r, z, theta) of the minimiser is also
    returned, for tangency checks.
    """
    prof = torus.profile if isinstance(torus, ShrinkerTorus) else torus
    z = prof.z
    m = np.abs(z) > 0
    q = np.full(prof.size, np.inf)
    q[m] = prof.r[m] / np.abs(z[m])
    i = int(np.argmin(q))
    best = float(q[i])
    pt = (prof.r[i], prof.z[i], prof.theta[i])
    if 0 < i < prof.size - 1 and np.all(np.isfinite(q[i - 1:i + 2])):
        y0, y1, y2 = q[i - 1:i + 2]
        den = y0 - 2 * y1 + y2
        if den > 0:
            x = 0.5 * (y0 - y2) / den  # offset in samples
            best = float(y1 - 0.25 * (y0 - y2) * x)
            j = i + (1 if x > 0 else -1)
            w = abs(x)
            pt = tuple((1 - w) * a + w * b for a, b in ((prof.r[i], prof.r[j]), (prof.z[i], prof.z[j]),
                                                        (prof.theta[i], prof.theta[j])))
    return (best, pt) if return_point else best


def nappe_profile(delta, height, n=2, r_min=0.05, rho_max=12.0, step=1e-3):
    """Upper sheet z = sqrt(height^2 + r^2 / delta^2), asymptotic to the cone r = delta z.

    It lies inside {r <= delta |z|}; used as a synthetic cone-condition test curve.
    """
    slope = lambda r: r / (delta ** 2 * math.sqrt(height ** 2 + (r / delta) ** 2))
    L = rho_max * math.hypot(delta, 1.0)
    N = int(L / step)
    s_grid = np.arange(N + 1) * step
    sol = solve_ivp(lambda t, y: [1.0 / math.hypot(1.0, slope(y[0]))], (0.0, s_grid[-1]), [r_min],
                    method="DOP853", rtol=1e-12, atol=1e-12, t_eval=s_grid)
    r = sol.y[0]
    z = np.sqrt(height ** 2 + (r / delta) ** 2)
    theta = np.arctan2(r / (delta ** 2 * z), 1.0)
    return ProfileCurve(n, s_grid, r, z, theta, step)


# -- avoidance -------------------------------------------------------------------

@dataclass(frozen=True)
class AvoidanceReport:
    t: np.ndarray
    distance: np.ndarray
    min_distance: float
    t_min: float
    precondition_ok: bool
    broken: tuple
    cone_distance: float


def _extend(profile: ProfileCurve, radius):
    """Continue the outward-facing ends of an open profile along their end tangents.

    Returns (r, z, theta) arrays.
    """
    r, z, th = profile.r, profile.z, profile.theta
    rs, zs, ts = [r], [z], [th]
    for end, sgn in ((-1, 1.0), (0, -1.0)):
        rho_end = math.hypot(r[end], z[end])
        outward = sgn * (r[end] * math.cos(th[end]) + z[end] * math.sin(th[end])) > 0
        if rho_end >= radius or not outward:
            continue
        L = radius - rho_end + 1.0
        t = np.arange(1, int(L / profile.step) + 2) * profile.step
        er = r[end] + sgn * t * math.cos(th[end])
        ez = z[end] + sgn * t * math.sin(th[end])
        et = np.full(t.size, th[end])
        if end == -1:
            rs.append(er), zs.append(ez), ts.append(et)
        else:
            rs.insert(0, er[::-1]), zs.insert(0, ez[::-1]), ts.insert(0, et)
    return np.concatenate(rs), np.concatenate(zs), np.concatenate(ts)


def avoidance_check(expander, torus: ShrinkerTorus, t_steps=100, force=False):
    """min over t in (0,1) of dist(sqrt(t) Sigma, sqrt(1-t) Lambda) in the (r, z) half-plane.

    ``expander`` is a RotationalExpander or a (full ProfileCurve, cone slope)
    pair.  The maximum-principle argument needs C(Sigma) to miss Lambda, which
    for the cone r = delta |z| means delta < delta0.  If that fails a
    PreconditionError is raised unless ``force`` is set, in which case the
    distances are still computed and ``precondition_ok`` is False.

    The expander profile is extended along its end tangents so that it covers
    the rescaled torus for every t on the grid.  A torus sample set that lies
    on both sides of the expander curve counts as an intersection (distance 0).
    """
    if isinstance(expander, RotationalExpander):
        prof, delta = expander.full_profile, expander.delta_fit
    else:
        prof, delta = expander
    broken = []
    if not delta < torus.delta0:
        broken.append(f"cone slope {delta:.6g} is not below delta0 {torus.delta0:.6g}: C(Sigma) meets Lambda")
    if broken and not force:
        raise PreconditionError("; ".join(broken))
    ts = np.arange(1, t_steps + 1) / (t_steps + 1)
    tr, tz = torus.profile.r, torus.profile.z
    lam_max = math.sqrt((1 - ts[0]) / ts[0])
    er, ez, eth = _extend(prof, lam_max * torus.Rplus + 1.0)
    # balanced trees degrade badly on long collinear runs like the tangent extensions
    tree = cKDTree(np.column_stack([er, ez]), balanced_tree=False, compact_nodes=False)
    nr, nz = -np.sin(eth), np.cos(eth)
    dist = np.empty(ts.size)
    for k, t in enumerate(ts):
        lam = math.sqrt((1 - t) / t)
        pr, pz = lam * tr, lam * tz
        d, j = tree.query(np.column_stack([pr, pz]), workers=-1)
        side = (pr - er[j]) * nr[j] + (pz - ez[j]) * nz[j]
        crossed = side.min() < 0 < side.max()
        dist[k] = 0.0 if crossed else math.sqrt(t) * float(d.min())
    # the t -> 0 limit: distance between the cone r = delta |z| and Lambda
    nrm = math.hypot(delta, 1.0)
    cone = float(np.min(np.abs(tr - delta * np.abs(tz)) / nrm))
    if np.any(tr - delta * np.abs(tz) < 0):
        cone = 0.0
    k = int(np.argmin(dist))
    return AvoidanceReport(ts, dist, float(dist[k]), float(ts[k]), not broken, tuple(broken), cone)


# -- barrier ------------------------------------------------------------------------

@dataclass(frozen=True)
class BarrierParams:
    v: tuple
    eta: float
    h: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.v, float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("v must be a unit vector")
        if not self.eta > 0 or self.h < 0:
            raise ValueError("need eta > 0 and h >= 0")


@dataclass(frozen=True)
class BarrierReport:
    f: np.ndarray
    computed: np.ndarray
    closed_form: np.ndarray
    residual_sup: float


def _embed(profile: ProfileCurve, phi):
    """Points and normals in R^{n+1} at angles ``phi`` in the (x1, x2) plane."""
    n = profile.n
    P = profile.size
    A = len(phi)
    X = np.zeros((A, P, n + 1))
    N = np.zeros((A, P, n + 1))
    T = np.zeros((A, P, n + 1))
    st, ct = np.sin(profile.theta), np.cos(profile.theta)
    for a, ph in enumerate(phi):
        w = np.zeros(n)
        w[0] = math.cos(ph)
        if n > 1:
            w[1] = math.sin(ph)
        X[a, :, :n] = profile.r[:, None] * w
        X[a, :, n] = profile.z
        N[a, :, :n] = -st[:, None] * w
        N[a, :, n] = ct
        T[a, :, :n] = ct[:, None] * w
        T[a, :, n] = st
    return X, N, T


def barrier_eval(params: BarrierParams, profile: ProfileCurve, angles=16):
    """f_{v,eta,h} on the surface and the residual of L^0 f - f against its closed form.

    L^0 = Delta_Sigma + x.grad/2 is evaluated from the ambient derivatives of
    f with Delta_Sigma F = tr D^2F - n.D^2F n - H n.grad F, where H comes from
    the profile's discrete curvature.
    """
    v = np.asarray(params.v, float)
    if v.size != profile.n + 1:
        raise ValueError("v must live in R^{n+1}")
    c = 1.0 + params.eta ** -2
    n = profile.n
    curv = curvature(profile)
    phi = np.linspace(0.0, 2 * math.pi, angles, endpoint=False)
    X, N, _ = _embed(profile, phi)
    xv = X @ v
    nv = N @ v
    x2 = np.sum(X * X, axis=-1)
    xn = np.sum(X * N, axis=-1)
    f = 2 * n + x2 - c * xv ** 2 + params.h
    grad_n = 2 * xn - 2 * c * xv * nv          # n . grad F
    x_grad = 2 * x2 - 2 * c * xv ** 2           # x . grad F
    lap = (2 * (n + 1) - 2 * c) - (2 - 2 * c * nv ** 2) - curv.H[None, :] * grad_n
    drift = 0.5 * (x_grad - xn * grad_n)
    computed = lap + drift - f
    closed = -2 * c * (1 - nv ** 2) - params.h
    inner = slice(2, -2)
    res = float(np.max(np.abs(computed[:, inner] - closed[:, inner])))
    return BarrierReport(f, computed, closed, res)


def barrier_fd_residual(params: BarrierParams, profile: ProfileCurve, order=4):
    """Same identity through a mode decomposition with finite differences in s.

    Only axis-parallel or (e1, e_{n+1})-plane directions are supported.  The
    function is split into degree-0, 1 and 2 harmonics in the angle and each
    radial factor is differentiated with central differences of the given
    ``order`` (2 or 4).  Returns the sup residual over interior samples and
    angles 0 and pi/2.  Sample noise e in the profile enters as e / step^2, so
    the step should not be taken much below 1e-3.
    """
    v = np.asarray(params.v, float)
    n = profile.n
    if np.any(v[1:n] != 0):
        raise ValueError("direction must lie in the (x1, x_{n+1}) plane")
    a1, a3 = v[0], v[n]
    c = 1.0 + params.eta ** -2
    r, z = profile.r, profile.z
    h = profile.step
    # x.v = a1 r w1 + a3 z,  w1^2 = 1/n + (w1^2 - 1/n)
    g0 = 2 * n + r ** 2 + z ** 2 + params.h - c * (a1 ** 2 * r ** 2 / n + a3 ** 2 * z ** 2)
    g1 = -2 * c * a1 * a3 * r * z
    g2 = -c * a1 ** 2 * r ** 2
    drift = (n - 1) * np.cos(profile.theta) / r + 0.5 * profile.xdotT

    if order == 4:
        def d1(f):
            return (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)

        def d2(f):
            return (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)
    elif order == 2:
        def d1(f):
            return (f[3:-1] - f[1:-3]) / (2 * h)

        def d2(f):
            return (f[3:-1] - 2 * f[2:-2] + f[1:-3]) / (h * h)
    else:
        raise ValueError("order must be 2 or 4")

    sl = slice(2, -2)

    def L0(g, lam):
        return d2(g) + drift[sl] * d1(g) - lam * g[sl] / r[sl] ** 2

    nt = np.cos(profile.theta)[sl]
    st = np.sin(profile.theta)[sl]
    worst = 0.0
    for ph in (0.0, 0.5 * math.pi):
        w1 = math.cos(ph)
        harm2 = w1 ** 2 - 1.0 / n
        f = g0[sl] + g1[sl] * w1 + g2[sl] * harm2
        Lf = L0(g0, 0) + L0(g1, n - 1) * w1 + L0(g2, 2 * n) * harm2
        nv = -st * w1 * a1 + nt * a3
        closed = -2 * c * (1 - nv ** 2) - params.h
        worst = max(worst, float(np.max(np.abs(Lf - f - closed))))
    return worst


def barrier_region_check(params: BarrierParams, profile: ProfileCurve, angles=16, threshold=None):
    """Count samples in the slab |x.v| < threshold and whether f > 0 on all of them.

    Since |x|^2 >= (x.v)^2, f >= 2n + h - (x.v)^2 / eta^2, so f > 0 on the slab
    of half-width eta sqrt(2n + h), the default threshold.
    """
    v = np.asarray(params.v, float)
    phi = np.linspace(0.0, 2 * math.pi, angles, endpoint=False)
    X, _, _ = _embed(profile, phi)
    xv = X @ v
    f = 2 * profile.n + np.sum(X * X, axis=-1) - (1 + params.eta ** -2) * xv ** 2 + params.h
    if threshold is None:
        threshold = params.eta * math.sqrt(2 * profile.n + params.h)
    region = np.abs(xv) < threshold
    return int(np.count_nonzero(region)), bool(np.all(f[region] > 0))
