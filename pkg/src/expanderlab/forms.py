"""Weighted bilinear forms on rotational hypersurfaces and numerical audits of their identities.

Functions are radial factors g(s) of g(s) Y_m(omega), sampled on a full
(mirrored) profile.  All integrals carry the weight
omega_{n-1} r^{n-1} e^{|x|^2/4} unless stated otherwise.

A perturbation f = x + eps psi v moves each profile point along a
rotationally symmetric transverse section v = (v_r, v_z).  The perturbed
generating curve gamma_f and its first two derivatives are formed in closed
form from the base curve, so the pullback weight

    Omega_f = |gamma_f'| (r_f / r)^{n-1} e^{(|f|^2 - |x|^2)/4}

is exactly 1 at eps = 0.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DivergentNorm, PreconditionError, StepTooLarge
from .geometry import CurvatureData, ProfileCurve, curvature, tail_grows
from .shooting import RotationalExpander

__all__ = [
    "Surface",
    "TestFunction",
    "TransverseSectionData",
    "NormalPerturbation",
    "bump",
    "random_test_function",
    "normal_section",
    "tilted_section",
    "perturb",
    "normal_graph",
    "family_direction",
    "form_B",
    "form_D",
    "form_Q",
    "form_Q_aprime",
    "apply_L",
    "apply_Lv",
    "apply_Lprime",
    "symmetry_residual",
    "variation_check",
    "perturbation_check",
    "epsilon_threshold",
    "quadform_stability_check",
    "poincare_check",
    "boundary_radius",
    "run_audit",
]


def _d1(f, h):
    d = np.gradient(f, h, edge_order=2)
    if f.size >= 5:
        d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    return d


@dataclass(frozen=True)
class Surface:
    """A full profile with the curvature and weight data the forms need."""

    profile: ProfileCurve
    curv: CurvatureData
    logw: np.ndarray
    qw: np.ndarray
    dkappa: np.ndarray

    @classmethod
    def of(cls, obj):
        if isinstance(obj, Surface):
            return obj
        prof = obj.full_profile if isinstance(obj, RotationalExpander) else obj
        curv = curvature(prof)
        logw = prof.log_area_density + 0.25 * prof.x2
        return cls(prof, curv, logw, prof.quadrature_weights(), _d1(curv.kappa_prof, prof.step))

    @property
    def n(self):
        return self.profile.n

    @property
    def s(self):
        return self.profile.s

    @property
    def drift(self):
        """W'/W for W = r^{n-1} e^{|x|^2/4}."""
        p = self.profile
        return (p.n - 1) * np.cos(p.theta) / p.r + 0.5 * p.xdotT

    def integrate(self, dens, extra_log=None):
        lw = self.logw if extra_log is None else self.logw + extra_log
        c = float(np.max(lw))
        return math.exp(c) * float(np.sum(self.qw * dens * np.exp(lw - c)))


@dataclass(frozen=True)
class TestFunction:
    """Radial factor of a mode-m function with two arc-length derivatives."""

    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    m: int = 0
    support: tuple | None = None

    def scale(self, a):
        return TestFunction(a * self.values, a * self.d1, a * self.d2, self.m, self.support)

    def __add__(self, other):
        if other.m != self.m:
            raise ValueError("cannot add functions of different modes")
        if self.support is None or other.support is None:
            sup = None
        else:
            sup = (min(self.support[0], other.support[0]), max(self.support[1], other.support[1]))
        return TestFunction(self.values + other.values, self.d1 + other.d1, self.d2 + other.d2, self.m, sup)

    def times(self, phi, dphi, d2phi):
        """Product with a rotationally symmetric factor phi."""
        return TestFunction(phi * self.values, dphi * self.values + phi * self.d1,
                            d2phi * self.values + 2 * dphi * self.d1 + phi * self.d2, self.m, self.support)

    @classmethod
    def zero(cls, surface: Surface, m=0):
        z = np.zeros(surface.profile.size)
        return cls(z, z, z, m, (0.0, 0.0))

    @classmethod
    def from_samples(cls, surface: Surface, values, m=0, support=None):
        """Spline-differentiated samples; ``support`` defaults to where values are nonzero."""
        values = np.asarray(values, float)
        if support is None:
            nz = np.nonzero(values)[0]
            support = (float(surface.s[nz[0]]), float(surface.s[nz[-1]])) if nz.size else (0.0, 0.0)
        # the spline only sees samples inside the support; outside everything is zero
        inside = (surface.s >= support[0] - 1e-12) & (surface.s <= support[1] + 1e-12)
        v = np.where(inside, values, 0.0)
        d1 = np.zeros_like(v)
        d2 = np.zeros_like(v)
        if np.count_nonzero(inside) >= 4:
            cs = CubicSpline(surface.s[inside], v[inside])
            d1[inside] = cs(surface.s[inside], 1)
            d2[inside] = cs(surface.s[inside], 2)
        return cls(v, d1, d2, m, support)

    @classmethod
    def from_eigenpair(cls, pair, surface: Surface):
        v, d1, d2 = pair.sample(surface.profile)
        return cls(v, d1, d2, pair.m, (-pair.s_trunc, pair.s_trunc))


def bump(surface: Surface, center, width, amp=1.0, m=0):
    """amp * exp(-1/(1 - t^2)) with t = (s - center)/width, and its derivatives."""
    s = surface.s
    t = (s - center) / width
    inside = np.abs(t) < 1.0
    v = np.zeros_like(s)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    ti = t[inside]
    q = 1.0 - ti * ti
    psi = np.exp(-1.0 / q)
    g1 = -2.0 * ti / q ** 2
    g2 = -(2.0 + 6.0 * ti * ti) / q ** 3
    v[inside] = amp * psi
    d1[inside] = amp * psi * g1 / width
    d2[inside] = amp * psi * (g1 * g1 + g2) / width ** 2
    return TestFunction(v, d1, d2, m, (center - width, center + width))


def random_test_function(surface: Surface, rng, s_support=6.0, max_bumps=3, m=0, min_width=0.3):
    """Sum of one to ``max_bumps`` random bumps inside |s| < s_support."""
    k = int(rng.integers(1, max_bumps + 1))
    out = None
    for _ in range(k):
        width = float(rng.uniform(min_width, 0.5 * s_support))
        center = float(rng.uniform(-s_support + width, s_support - width))
        amp = float(rng.normal())
        b = bump(surface, center, width, amp, m)
        out = b if out is None else out + b
    return out


def _check_support(surface: Surface, *funcs):
    lo, hi = surface.s[0], surface.s[-1]
    for f in funcs:
        if isinstance(f, TestFunction) and f.support is not None and (f.support[0] < lo - 1e-9 or f.support[1] > hi + 1e-9):
            raise ValueError("test function support exceeds the sampled surface")


@dataclass(frozen=True)
class TransverseSectionData:
    """A rotationally symmetric vector field v = v_r e_r + v_z e_z along the profile."""

    vr: np.ndarray
    vz: np.ndarray
    dvr: np.ndarray
    dvz: np.ndarray
    d2vr: np.ndarray
    d2vz: np.ndarray
    vdotn: np.ndarray
    dvdotn: np.ndarray
    d2vdotn: np.ndarray
    a_prime: np.ndarray

    def factor(self):
        return self.vdotn, self.dvdotn, self.d2vdotn


def _section_from_angle(surface: Surface, alpha, dalpha, d2alpha):
    """v = n rotated toward the tangent by angle alpha, i.e. v = (-sin psi, cos psi), psi = theta - alpha."""
    th = surface.profile.theta
    k = surface.curv.kappa_prof
    psi = th - alpha
    p1 = k - dalpha
    p2 = surface.dkappa - d2alpha
    sp_, cp_ = np.sin(psi), np.cos(psi)
    vr, vz = -sp_, cp_
    dvr, dvz = -p1 * cp_, -p1 * sp_
    d2vr = -p2 * cp_ + p1 * p1 * sp_
    d2vz = -p2 * sp_ - p1 * p1 * cp_
    phi = np.cos(alpha)
    dphi = -np.sin(alpha) * dalpha
    d2phi = -np.cos(alpha) * dalpha ** 2 - np.sin(alpha) * d2alpha
    if np.min(np.abs(phi)) < 1e-3:
        raise ValueError("section is not transverse (v.n vanishes)")
    Lphi = d2phi + surface.drift * dphi + (surface.curv.normA2 - 0.5) * phi
    return TransverseSectionData(vr, vz, dvr, dvz, d2vr, d2vz, phi, dphi, d2phi, -Lphi / phi)


def normal_section(surface: Surface):
    z = np.zeros(surface.profile.size)
    return _section_from_angle(surface, z, z, z)


def tilted_section(surface: Surface, alpha0=0.6, center=0.0, width=4.0):
    """Unit field tilted from n by a smooth compactly supported angle alpha0 * bump."""
    b = bump(surface, center, width, alpha0 * math.e)  # peak value alpha0
    if abs(alpha0) >= 0.5 * math.pi:
        raise ValueError("tilt must stay below pi/2")
    return _section_from_angle(surface, b.values, b.d1, b.d2)


# -- perturbations -----------------------------------------------------------

@dataclass(frozen=True)
class NormalPerturbation:
    """Geometry of f = x + eps psi v pulled back to the base profile."""

    eps: float
    psi: TestFunction
    rf: np.ndarray
    zf: np.ndarray
    speed: np.ndarray
    logOmega: np.ndarray
    OmegaF: np.ndarray
    OmegaFv: np.ndarray
    normA2_f: np.ndarray
    vdotn_f: np.ndarray
    dvdotn_f: np.ndarray
    section: TransverseSectionData = field(repr=False)

    @property
    def omega_minus_one(self):
        return np.expm1(self.logOmega)


def perturb(surface: Surface, eps, psi: TestFunction, section: TransverseSectionData | None = None):
    """Build NormalPerturbation for f = x + eps psi v (v defaults to the unit normal)."""
    sec = normal_section(surface) if section is None else section
    p = surface.profile
    ct, st = np.cos(p.theta), np.sin(p.theta)
    k = surface.curv.kappa_prof
    a, da, d2a = eps * psi.values, eps * psi.d1, eps * psi.d2
    # first derivative gamma_f' = T + w1, second gamma_f'' = kappa n + w2
    w1r = da * sec.vr + a * sec.dvr
    w1z = da * sec.vz + a * sec.dvz
    w2r = d2a * sec.vr + 2 * da * sec.dvr + a * sec.d2vr
    w2z = d2a * sec.vz + 2 * da * sec.dvz + a * sec.d2vz
    g1r, g1z = ct + w1r, st + w1z
    g2r, g2z = -k * st + w2r, k * ct + w2z
    speed2_m1 = 2 * (ct * w1r + st * w1z) + w1r ** 2 + w1z ** 2
    if np.any(speed2_m1 <= -1.0 + 1e-12):
        raise StepTooLarge("perturbed curve is singular")
    log_speed = 0.5 * np.log1p(speed2_m1)
    speed = np.exp(log_speed)
    rel_r = a * sec.vr / p.r
    if np.any(rel_r <= -1.0):
        raise StepTooLarge("perturbation pushes the profile through the axis")
    rf = p.r + a * sec.vr
    zf = p.z + a * sec.vz
    dx2 = 2 * a * (p.r * sec.vr + p.z * sec.vz) + a * a * (sec.vr ** 2 + sec.vz ** 2)
    logO = log_speed + (p.n - 1) * np.log1p(rel_r) + 0.25 * dx2
    Omega = np.exp(logO)
    cross = g1r * g2z - g1z * g2r
    kf = cross / speed ** 3
    normA2_f = kf ** 2 + (p.n - 1) * (g1z / speed / rf) ** 2
    # n_f = (-g1z, g1r)/speed and its arc-length derivative
    nfr, nfz = -g1z / speed, g1r / speed
    dot12 = g1r * g2r + g1z * g2z
    dnfr = -g2z / speed + g1z * dot12 / speed ** 3
    dnfz = g2r / speed - g1r * dot12 / speed ** 3
    vn_f = sec.vr * nfr + sec.vz * nfz
    dvn_f = sec.dvr * nfr + sec.dvz * nfz + sec.vr * dnfr + sec.vz * dnfz
    Omega_v = (vn_f / sec.vdotn) ** 2 * Omega
    return NormalPerturbation(float(eps), psi, rf, zf, speed, logO, Omega, Omega_v, normA2_f, vn_f, dvn_f, sec)


def normal_graph(base: Surface, other: ProfileCurve, s_range=None, max_iter=30, tol=1e-12):
    """Normal distance t(s) with gamma(s) + t(s) n(s) on ``other``, by Newton's method.

    Raises StepTooLarge when the two profiles are not normal graphs over each
    other on ``s_range`` (Newton failure, folding, or focal distance).
    """
    p = base.profile
    lo, hi = (p.s[0], p.s[-1]) if s_range is None else s_range
    m = (p.s >= lo - 1e-12) & (p.s <= hi + 1e-12)
    s = p.s[m]
    gx, gz = p.r[m], p.z[m]
    nx, nz = -np.sin(p.theta[m]), np.cos(p.theta[m])
    cr = CubicSpline(other.s, other.r)
    cz = CubicSpline(other.s, other.z)
    sig = np.clip(s, other.s[0], other.s[-1])
    t = np.zeros_like(s)
    for _ in range(max_iter):
        Fx = cr(sig) - gx - t * nx
        Fz = cz(sig) - gz - t * nz
        ax, az = cr(sig, 1), cz(sig, 1)
        det = ax * (-nz) - (-nx) * az
        if np.any(np.abs(det) < 1e-8):
            raise StepTooLarge("profiles are not transverse normal graphs")
        dsig = (Fx * (-nz) - (-nx) * Fz) / det
        dt = (ax * Fz - az * Fx) / det
        sig = sig - dsig
        t = t - dt
        if np.any(sig < other.s[0]) or np.any(sig > other.s[-1]):
            raise StepTooLarge("normal lines leave the other profile's computed range")
        if max(np.max(np.abs(dsig)), np.max(np.abs(dt))) < tol:
            break
    else:
        raise StepTooLarge("normal-graph Newton iteration did not converge")
    if np.any(np.diff(sig) <= 0):
        raise StepTooLarge("normal projection is not monotone; profiles are not graphs over each other")
    if np.max(np.abs(t * base.curv.kappa_prof[m])) >= 0.5:
        raise StepTooLarge("normal displacement reaches the focal distance")
    full = np.zeros(p.size)
    full[m] = t
    return full, (float(s[0]), float(s[-1]))


def family_direction(exp: RotationalExpander, dr0=1e-3, s_trunc=10.0):
    """Normal velocity of the expander family d/dr0, scaled to unit C^1 size.

    The scale is sup |psi| / (1 + |x|) + sup |psi'| over |s| <= s_trunc, so
    eps * psi has scaled C^1 norm eps.
    """
    from .shooting import solve_expander

    surf = Surface.of(exp)
    other = solve_expander(exp.r0 + dr0, exp.n, exp.options).full_profile
    t, _ = normal_graph(surf, other, (-s_trunc, s_trunc))
    psi = TestFunction.from_samples(surf, t / dr0, support=(-s_trunc, s_trunc))
    inside = np.abs(surf.s) <= s_trunc
    norm = float(np.max(np.abs(psi.values[inside]) / (1 + surf.profile.radius[inside]))
                 + np.max(np.abs(psi.d1[inside])))
    return psi.scale(1.0 / norm), norm


# -- forms -------------------------------------------------------------------

def _lam(u, n):
    return u.m * (u.m + n - 2)


def _as_tf(x, surface):
    if isinstance(x, TestFunction):
        return x
    x = np.asarray(x, float)
    if x.shape != surface.s.shape:
        raise ValueError("samples do not match the surface")
    z = np.zeros_like(x)
    return TestFunction(x, z, z)


def _vw(u, sec):
    return u.times(*sec.factor())


def form_B(u, v, surface, variant="plain", section=None, pert: NormalPerturbation | None = None):
    surface = Surface.of(surface)
    u, v = _as_tf(u, surface), _as_tf(v, surface)
    _check_support(surface, u, v)
    if variant == "plain":
        return surface.integrate(u.values * v.values)
    if variant == "vweighted":
        sec = normal_section(surface) if section is None else section
        return surface.integrate(u.values * v.values * sec.vdotn ** 2)
    if pert is None:
        raise ValueError("pullback variants need a NormalPerturbation")
    if variant == "pullback":
        return surface.integrate(u.values * v.values * pert.OmegaF)
    if variant == "pullback_vweighted":
        return surface.integrate(u.values * v.values * pert.vdotn_f ** 2 * pert.OmegaF)
    raise ValueError(f"unknown variant {variant!r}")


def _D_plain(u, v, surface):
    lam = _lam(u, surface.n)
    dens = u.d1 * v.d1
    if lam:
        dens = dens + lam * u.values * v.values / surface.profile.r ** 2
    return surface.integrate(dens)


def _D_pull(u, v, surface, pert):
    lam = _lam(u, surface.n)
    dens = u.d1 * v.d1 / pert.speed ** 2
    if lam:
        dens = dens + lam * u.values * v.values / pert.rf ** 2
    return surface.integrate(dens * pert.OmegaF)


def _pull_factor(u, pert):
    # multiply by psi_f = v.n_Lambda(f); only first derivatives are needed by D and Q
    return TestFunction(pert.vdotn_f * u.values, pert.dvdotn_f * u.values + pert.vdotn_f * u.d1,
                        np.zeros_like(u.values), u.m, u.support)


def form_D(u, v, surface, variant="plain", section=None, pert=None):
    surface = Surface.of(surface)
    u, v = _as_tf(u, surface), _as_tf(v, surface)
    _check_support(surface, u, v)
    if u.m != v.m:
        return 0.0
    if variant == "plain":
        return _D_plain(u, v, surface)
    if variant == "vweighted":
        sec = normal_section(surface) if section is None else section
        return _D_plain(_vw(u, sec), _vw(v, sec), surface)
    if pert is None:
        raise ValueError("pullback variants need a NormalPerturbation")
    if variant == "pullback":
        return _D_pull(u, v, surface, pert)
    if variant == "pullback_vweighted":
        return _D_pull(_pull_factor(u, pert), _pull_factor(v, pert), surface, pert)
    raise ValueError(f"unknown variant {variant!r}")


def form_Q(u, v, surface, variant="plain", section=None, pert=None):
    surface = Surface.of(surface)
    u, v = _as_tf(u, surface), _as_tf(v, surface)
    _check_support(surface, u, v)
    if u.m != v.m:
        return 0.0
    pot = surface.curv.normA2 - 0.5
    if variant == "plain":
        return _D_plain(u, v, surface) - surface.integrate(pot * u.values * v.values)
    if variant == "vweighted":
        sec = normal_section(surface) if section is None else section
        a, b = _vw(u, sec), _vw(v, sec)
        return _D_plain(a, b, surface) - surface.integrate(pot * a.values * b.values)
    if pert is None:
        raise ValueError("pullback variants need a NormalPerturbation")
    potf = pert.normA2_f - 0.5
    if variant == "pullback":
        return _D_pull(u, v, surface, pert) - surface.integrate(potf * u.values * v.values * pert.OmegaF)
    if variant == "pullback_vweighted":
        a, b = _pull_factor(u, pert), _pull_factor(v, pert)
        return _D_pull(a, b, surface, pert) - surface.integrate(potf * a.values * b.values * pert.OmegaF)
    raise ValueError(f"unknown variant {variant!r}")


def form_Q_aprime(u, v, surface, section):
    """Q_{Sigma,v} through int (grad u . grad v + a' u v)(v.n)^2 W, for cross-checking."""
    surface = Surface.of(surface)
    lam = _lam(u, surface.n)
    dens = u.d1 * v.d1 + (section.a_prime + lam / surface.profile.r ** 2) * u.values * v.values
    return surface.integrate(dens * section.vdotn ** 2)


def apply_L(surface, u: TestFunction):
    """L_Sigma applied to a mode-m radial factor."""
    surface = Surface.of(surface)
    lam = _lam(u, surface.n)
    return (u.d2 + surface.drift * u.d1 - lam * u.values / surface.profile.r ** 2
            + (surface.curv.normA2 - 0.5) * u.values)


def apply_Lv(surface, u, section):
    surface = Surface.of(surface)
    return section.vdotn * apply_L(surface, _vw(u, section))


def apply_Lprime(surface, u, section):
    return apply_Lv(surface, u, section) / section.vdotn ** 2


def symmetry_residual(u, v, surface, variant="plain", section=None):
    """Normalised |Q[u,v] + B[u, L v]| (both v-weighted identities for ``vweighted``)."""
    surface = Surface.of(surface)
    if variant == "plain":
        Lv = apply_L(surface, v)
        q = form_Q(u, v, surface)
        b = form_B(u, Lv, surface)
        scale = math.sqrt(form_B(u, u, surface) * form_B(Lv, Lv, surface))
        return abs(q + b) / scale if scale > 0 else 0.0
    if variant != "vweighted":
        raise ValueError("variant must be 'plain' or 'vweighted'")
    sec = normal_section(surface) if section is None else section
    q = form_Q(u, v, surface, "vweighted", sec)
    Lv = apply_Lv(surface, v, sec)
    Lp = apply_Lprime(surface, v, sec)
    s1 = math.sqrt(form_B(u, u, surface) * form_B(Lv, Lv, surface))
    s2 = math.sqrt(form_B(u, u, surface, "vweighted", sec) * form_B(Lp, Lp, surface, "vweighted", sec))
    if s1 == 0 or s2 == 0:
        return 0.0
    r1 = abs(q + form_B(u, Lv, surface)) / s1
    r2 = abs(q + form_B(u, Lp, surface, "vweighted", sec)) / s2
    return max(r1, r2)


# -- variations ----------------------------------------------------------------

def _energy_change(surface, u, v, s, t, section):
    comb = u.scale(s) + v.scale(t)
    pert = perturb(surface, 1.0, comb, section)
    return surface.integrate(pert.omega_minus_one)


@dataclass(frozen=True)
class VariationReport:
    eps: tuple
    first_fd: tuple
    first_exact: float
    first_residuals: tuple
    first_order: float
    second_fd: tuple
    second_extrapolated: float
    second_exact: float
    second_rel_error: float
    scale: float


def variation_check(exp, u: TestFunction, v: TestFunction | None = None, eps_list=(4e-3, 2e-3, 1e-3),
                    section=None):
    """Finite-difference first and second variation of the truncated E functional.

    E_R[f_{s,t}] - E_R[Sigma] = int (Omega_{f_{s,t}} - 1) W with
    f_{s,t} = x + (s u + t v) v_sec.  The first variation is compared with
    -B[Xi, u], Xi = -(v.n)(H + x.n/2); the mixed second derivative with
    Q_{Sigma,v}[u, v].  Differences are accumulated point-wise (expm1) so the
    cancellation in E itself never enters.
    """
    surface = Surface.of(exp)
    if u.m != 0 or (v is not None and v.m != 0):
        raise ValueError("variations are computed for rotationally symmetric functions")
    v = u if v is None else v
    sec = normal_section(surface) if section is None else section
    _check_support(surface, u, v)
    zero = TestFunction.zero(surface)
    res = surface.curv.H + 0.5 * surface.curv.xdotn
    xi = -sec.vdotn * res
    first_exact = -form_B(xi, u, surface)
    scale = form_D(u, u, surface) + form_B(u, u, surface)
    fd1, r1, fd2 = [], [], []
    for e in eps_list:
        d = (_energy_change(surface, u, zero, e, 0.0, sec) - _energy_change(surface, u, zero, -e, 0.0, sec)) / (2 * e)
        fd1.append(d)
        r1.append(abs(d - first_exact) / scale)
        pp = _energy_change(surface, u, v, e, e, sec)
        pm = _energy_change(surface, u, v, e, -e, sec)
        mp = _energy_change(surface, u, v, -e, e, sec)
        mm = _energy_change(surface, u, v, -e, -e, sec)
        fd2.append((pp - pm - mp + mm) / (4 * e * e))
    ratios = [math.log(r1[i] / r1[i + 1]) / math.log(eps_list[i] / eps_list[i + 1])
              for i in range(len(eps_list) - 1) if r1[i + 1] > 0 and r1[i] > 0]
    order = float(np.median(ratios)) if ratios else float("nan")
    q = form_Q(u, v, surface, "vweighted", sec)
    if len(eps_list) >= 2:
        e0, e1 = eps_list[-2], eps_list[-1]
        k = (e0 / e1) ** 2
        extrap = (k * fd2[-1] - fd2[-2]) / (k - 1)
    else:
        extrap = fd2[-1]
    denom = abs(q) if abs(q) > 1e-3 * scale else scale
    return VariationReport(tuple(eps_list), tuple(fd1), first_exact, tuple(r1), order, tuple(fd2),
                           float(extrap), q, abs(extrap - q) / denom, scale)


# -- perturbation inequalities -----------------------------------------------

@dataclass(frozen=True)
class PerturbationReport:
    eps: float
    delta: float
    margins: tuple  # worst relative margin per inequality, (rhs - lhs)/rhs
    passed: bool
    panel_size: int
    f_norm: float

    def to_json(self):
        return {"eps": self.eps, "delta": self.delta, "margins": list(self.margins),
                "pass": self.passed, "panel": self.panel_size, "f_norm": self.f_norm}


def perturbation_check(exp, u: TestFunction, mu, direction: TestFunction, eps, delta, panel,
                       section=None, residual=None):
    """Margins of the four perturbation inequalities for f = x + eps * direction * v.

    ``u`` is an eigenfunction of -L with eigenvalue ``mu`` <= 1/4.  For each
    test function w in ``panel``:
      1. |B_f[u,w] - B[u,w]|^2 <= delta^2 B[u] B[w]
      2. |B_f[u,w] - B[u,w]|^2 <= delta^2 B[u] B_f[w]
      3. |Q_f[u,w] - Q[u,w]|^2 <= delta^2 B[u] (D[w] + B[w])
      4. |Q_f[u,w] - Q[u,w]|^2 <= delta^2 B[u] (D_f[w] + B_f[w])
    With a section the v-weighted versions are used.
    """
    if mu > 0.25:
        raise PreconditionError(f"eigenvalue {mu} exceeds 1/4")
    if residual is not None and not residual < 1e-8:
        raise PreconditionError("eigenpair residual is not below 1e-8")
    surface = Surface.of(exp)
    sec = section
    pert = perturb(surface, eps, direction, sec)
    bv, pv = ("plain", "pullback") if sec is None else ("vweighted", "pullback_vweighted")
    Bu = form_B(u, u, surface, bv, sec)
    worst = [math.inf] * 4
    for w in panel:
        dB = form_B(u, w, surface, pv, sec, pert) - form_B(u, w, surface, bv, sec)
        dQ = form_Q(u, w, surface, pv, sec, pert) - form_Q(u, w, surface, bv, sec)
        Bw = form_B(w, w, surface, bv, sec)
        Bfw = form_B(w, w, surface, pv, sec, pert)
        Dw = form_D(w, w, surface, bv, sec)
        Dfw = form_D(w, w, surface, pv, sec, pert)
        rhs = [delta ** 2 * Bu * Bw, delta ** 2 * Bu * Bfw, delta ** 2 * Bu * (Dw + Bw), delta ** 2 * Bu * (Dfw + Bfw)]
        lhs = [dB * dB, dB * dB, dQ * dQ, dQ * dQ]
        for i in range(4):
            marg = (rhs[i] - lhs[i]) / rhs[i] if rhs[i] > 0 else (0.0 if lhs[i] == 0 else -math.inf)
            worst[i] = min(worst[i], marg)
    passed = all(m >= 0 for m in worst)
    return PerturbationReport(float(eps), float(delta), tuple(worst), passed, len(panel), float(eps))


def epsilon_threshold(exp, u, mu, direction, delta, panel, eps_grid=None, section=None):
    """First amplitude on ``eps_grid`` at which some inequality fails (None if none fails)."""
    eps_grid = np.geomspace(1e-4, 1.0, 25) if eps_grid is None else eps_grid
    last_pass = 0.0
    for e in eps_grid:
        try:
            rep = perturbation_check(exp, u, mu, direction, float(e), delta, panel, section)
        except StepTooLarge:
            return float(e), last_pass
        if not rep.passed:
            return float(e), last_pass
        last_pass = float(e)
    return None, last_pass


# -- quadratic-form sign stability ---------------------------------------------

@dataclass(frozen=True)
class SignReport:
    negative: tuple   # (mu, Q_f[u]/B_f[u]) for negative eigenfunctions
    positive: tuple
    stable: bool
    max_displacement: float


def quadform_stability_check(exp, nearby, modes=(0, 1), k=4, s_trunc=10.0, spacing=0.004):
    """Signs of Q_f on eigenfunctions of ``exp`` for the normal-graph map f onto ``nearby``."""
    from .spectral import assemble_jacobi, spectrum

    surface = Surface.of(exp)
    other = nearby.full_profile if isinstance(nearby, RotationalExpander) else nearby
    t, _ = normal_graph(surface, other, (-s_trunc, s_trunc))
    inside = np.abs(surface.s) <= s_trunc
    psi = TestFunction.from_samples(surface, t, support=(-s_trunc, s_trunc))
    neg, pos = [], []
    for m in modes:
        op = assemble_jacobi(exp, m, s_trunc, spacing)
        for pair in spectrum(op, k):
            u = TestFunction.from_eigenpair(pair, surface)
            pert = perturb(surface, 1.0, TestFunction(psi.values, psi.d1, psi.d2, m, psi.support))
            qf = form_Q(u, u, surface, "pullback", pert=pert)
            bf = form_B(u, u, surface, "pullback", pert=pert)
            (neg if pair.mu < 0 else pos).append((pair.mu, qf / bf, m))
    stable = all(q < 0 for _, q, _ in neg) and all(q > 0 for _, q, _ in pos)
    return SignReport(tuple(neg), tuple(pos), stable, float(np.max(np.abs(t[inside]))))


# -- Poincare inequalities ---------------------------------------------------------

@dataclass(frozen=True)
class PoincareRatios:
    pi1: float
    pi2: float
    boundary: float
    beta: float
    R: float

    def passed(self, tol=0.01):
        return self.pi1 <= 16 * (1 + tol) and self.pi2 <= 4 * (1 + tol) and self.boundary <= 2 * (1 + tol)


def boundary_radius(surface, min_radius=1.0):
    """Radius beyond which |x^T| >= |x| - 1/|x| and |grad |x|| >= 1/2 hold on the samples."""
    surface = Surface.of(surface)
    p = surface.profile
    rho = p.radius
    xT = np.abs(p.xdotT)
    bad = (xT < rho - 1.0 / rho) | (xT / rho < 0.5)
    R = max(min_radius, float(np.max(rho[bad])) if np.any(bad) else 0.0)
    return R


def _sphere_integral(surface, vals2, R):
    """int_{S_R} f^2 summed over the ends where |x| crosses R, and the s-values of the crossings."""
    p = surface.profile
    rho = p.radius
    tot = 0.0
    cuts = []
    from .geometry import sphere_area
    om = sphere_area(p.n - 1)
    for side in (p.s >= 0, p.s <= 0):
        idx = np.nonzero(side)[0]
        r_side = rho[idx]
        order = np.argsort(p.s[idx]) if p.s[idx][-1] > 0 else np.argsort(-p.s[idx])
        idx, r_side = idx[order], r_side[order]
        j = np.nonzero((r_side[:-1] < R) & (r_side[1:] >= R))[0]
        if j.size == 0:
            continue
        j = j[-1]
        a = (R - r_side[j]) / (r_side[j + 1] - r_side[j])
        f2 = (1 - a) * vals2[idx[j]] + a * vals2[idx[j + 1]]
        rr = (1 - a) * p.r[idx[j]] + a * p.r[idx[j + 1]]
        ss = (1 - a) * p.s[idx[j]] + a * p.s[idx[j + 1]]
        tot += om * rr ** (p.n - 1) * f2
        cuts.append(ss)
    return tot, cuts


def poincare_check(surface, f: TestFunction, beta, R=None):
    """Ratios for the two weighted Poincare inequalities and the boundary estimate.

    pi1 = int (4n + |x|^2) f^2 e^{beta|x|^2} / int |grad f|^2 e^{beta|x|^2}  (bound 16)
    pi2 = (4 beta - 1) int |x^T|^2 f^2 e^{beta|x|^2} / int |grad f|^2 e^{beta|x|^2}  (bound 4)
    boundary = R e^{beta R^2} int_{S_R} f^2 / int_{|x|>=R} |grad f|^2 e^{beta|x|^2}  (bound 2)
    """
    if beta < 0.25:
        raise PreconditionError("the inequalities require beta >= 1/4")
    surface = Surface.of(surface)
    p = surface.profile
    extra = (beta - 0.25) * p.x2
    lam = _lam(f, p.n)
    grad2 = f.d1 ** 2 + lam * f.values ** 2 / p.r ** 2
    f2 = f.values ** 2
    with np.errstate(divide="ignore"):
        logd = np.log(f2 + grad2) + surface.logw + extra
    if tail_grows(p, logd):
        raise DivergentNorm("test function is not in the weighted W^1 class")
    G = surface.integrate(grad2, extra)
    if G == 0:
        return PoincareRatios(0.0, 0.0, 0.0, beta, float("nan"))
    pi1 = surface.integrate((4 * p.n + p.x2) * f2, extra) / G
    pi2 = (4 * beta - 1) * surface.integrate(p.xdotT ** 2 * f2, extra) / G
    if R is None:
        R = boundary_radius(surface) + 0.5
    sph, cuts = _sphere_integral(surface, f2, R)
    # exterior integral, with the partial cells at the cuts handled by linear interpolation
    rho = p.radius
    ext_mask = rho >= R
    dens = grad2 * np.exp(surface.logw + extra - np.max(surface.logw + extra))
    ext = 0.0
    h = p.step
    ext = float(np.sum(dens[ext_mask] * h))
    # trapezoid correction: half weight at the innermost samples, plus the sliver up to R
    for sc in cuts:
        i = int(np.argmin(np.abs(p.s - sc)))
        if ext_mask[i]:
            ext -= 0.5 * dens[i] * h
            ext += dens[i] * abs(p.s[i] - sc)
    ext *= math.exp(float(np.max(surface.logw + extra)))
    if ext == 0:
        bnd = 0.0 if sph == 0 else math.inf
    else:
        bnd = R * math.exp(beta * R * R) * sph / ext
    return PoincareRatios(float(pi1), float(pi2), float(bnd), float(beta), float(R))


# -- randomized audits -----------------------------------------------------------

def _poincare_task(args):
    surface, seed, beta, s_support = args
    rng = np.random.default_rng(seed)
    f = random_test_function(surface, rng, s_support)
    R0 = boundary_radius(surface) + 0.5
    R = float(rng.uniform(R0, R0 + 2.0))
    r = poincare_check(surface, f, beta, R)
    return r.pi1, r.pi2, r.boundary


def _forms_task(args):
    surface, seed, section, s_support = args
    rng = np.random.default_rng(seed)
    m = int(rng.integers(0, 3))
    u = random_test_function(surface, rng, s_support, m=m)
    v = random_test_function(surface, rng, s_support, m=m)
    return symmetry_residual(u, v, surface), symmetry_residual(u, v, surface, "vweighted", section)


def _variation_task(args):
    surface, seed, s_support = args
    rng = np.random.default_rng(seed)
    u = random_test_function(surface, rng, s_support)
    rep = variation_check(surface, u)
    return rep.first_residuals[-1], rep.second_rel_error


def run_audit(suite, exp, samples=100, seed=0, workers=1, s_support=6.0, delta=0.1, eps=1e-3):
    """Randomised audit; returns a list of per-inequality records.

    Each sample draws from its own generator spawned from ``seed`` so the
    report does not depend on the worker count.
    """
    surface = Surface.of(exp)
    seeds = [np.random.SeedSequence([seed, i]) for i in range(samples)]
    pool = ThreadPoolExecutor(max_workers=workers) if workers and workers > 1 else None
    run = (lambda fn, jobs: list(pool.map(fn, jobs))) if pool else (lambda fn, jobs: [fn(j) for j in jobs])
    recs = []
    try:
        if suite == "poincare":
            for beta in (0.25, 0.375):
                out = np.array(run(_poincare_task, [(surface, sd, beta, s_support) for sd in seeds])).reshape(-1, 3)
                for j, (name, const) in enumerate((("pi1", 16.0), ("pi2", 4.0), ("boundary", 2.0))):
                    mx = float(np.max(out[:, j])) if samples else 0.0
                    recs.append(_record(f"{name}_beta={beta}", const, mx, samples, seed, mx <= const * 1.01))
        elif suite == "forms":
            sec = tilted_section(surface)
            out = np.array(run(_forms_task, [(surface, sd, sec, s_support) for sd in seeds])).reshape(-1, 2)
            for j, name in enumerate(("symmetry_plain", "symmetry_vweighted")):
                mx = float(np.max(out[:, j])) if samples else 0.0
                recs.append(_record(name, 1e-6, mx, samples, seed, mx < 1e-6))
        elif suite == "variation":
            out = np.array(run(_variation_task, [(surface, sd, s_support) for sd in seeds])).reshape(-1, 2)
            mx1 = float(np.max(out[:, 0])) if samples else 0.0
            mx2 = float(np.max(out[:, 1])) if samples else 0.0
            recs.append(_record("first_variation", 1e-6, mx1, samples, seed, mx1 < 1e-6))
            recs.append(_record("second_variation", 1e-4, mx2, samples, seed, mx2 < 1e-4))
        elif suite == "perturbation":
            if not isinstance(exp, RotationalExpander):
                raise PreconditionError("the perturbation suite needs a solved expander")
            from .spectral import assemble_jacobi, spectrum
            pairs = [p for p in spectrum(assemble_jacobi(exp, 0), 4) if p.mu <= 0.25]
            direction, _ = family_direction(exp)
            panel = [random_test_function(surface, np.random.default_rng(sd), s_support) for sd in seeds]
            worst = [math.inf] * 4
            for pair in pairs:
                u = TestFunction.from_eigenpair(pair, surface)
                rep = perturbation_check(exp, u, pair.mu, direction, eps, delta, panel, residual=pair.residual)
                worst = [min(a, b) for a, b in zip(worst, rep.margins)]
            for i in range(4):
                w = worst[i] if pairs else 0.0
                recs.append(_record(f"perturbation_{i + 1}", delta, w, samples * len(pairs), seed, w >= 0))
        else:
            raise ValueError(f"unknown suite {suite!r}")
    finally:
        if pool:
            pool.shutdown()
    return recs


def _record(ident, const, observed, count, seed, ok):
    return {"inequality": ident, "constant": const, "max_observed": observed,
            "samples": int(count), "seed": int(seed), "pass": bool(ok)}


def audit_json(records):
    return json.dumps(records, sort_keys=True, indent=2)
