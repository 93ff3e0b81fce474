"""Gaussian-weighted Jacobi spectra of rotational expanders, one Fourier mode at a time.

For a function g(s) Y_m(omega) with Y_m a degree-m spherical harmonic the
Jacobi form reduces to

    Q_m[g] = int (g'^2 + (lambda_m / r^2 - |A|^2 + 1/2) g^2) w ds,
    w = omega_{n-1} r^{n-1} e^{|x|^2/4},   lambda_m = m (m + n - 2),

and B[g] = int g^2 w ds.  Both are discretised with piecewise-linear hat
functions on the mirrored profile, with a Dirichlet condition at |s| = s_trunc.
Entries are assembled in log-rescaled variables (row i multiplied by
e^{-l_i/2}, l_i = log w at node i) so that e^{|x|^2/4} never overflows.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.interpolate import CubicSpline
from scipy.special import comb

from .errors import (FitUnreliable, IndexIncomplete, OverflowGuard, PreconditionError,
                     SingularityFlag, TruncationTooSmall)
from .geometry import ProfileCurve, curvature, simpson_weights, weighted_norm
from .shooting import RotationalExpander

__all__ = [
    "WeightedOperator",
    "Eigenpair",
    "ModeSpectrum",
    "SpectrumReport",
    "DecayFit",
    "mode_multiplicity",
    "assemble_jacobi",
    "assemble_form",
    "spectrum",
    "apply_operator",
    "killing_field",
    "killing_residual",
    "morse_index",
    "decay_fit",
    "concentration_check",
    "iso_conditioning",
]


def mode_multiplicity(m, n):
    """Dimension of degree-m spherical harmonics on S^{n-1}."""
    if m == 0:
        return 1
    return int(round(comb(m + n - 1, n - 1, exact=True) - comb(m + n - 3, n - 1, exact=True)))


@dataclass(frozen=True)
class WeightedOperator:
    """Rescaled tridiagonal pair (stiffness, mass) for one Fourier mode.

    ``nodes`` are the interior node arc lengths; ``log_scale`` holds l_i so
    that nodal values are recovered as u_i = e^{-l_i/2} * (rescaled vector)_i.
    """

    m: int
    n: int
    beta: float
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    nodes: np.ndarray
    log_scale: np.ndarray
    s_trunc: float
    spacing: float
    potential: np.ndarray
    profile: ProfileCurve = field(repr=False)

    @property
    def size(self):
        return self.nodes.size

    def to_nodal(self, vec):
        return np.asarray(vec) * np.exp(-0.5 * self.log_scale)[:, None] if np.ndim(vec) == 2 else \
            np.asarray(vec) * np.exp(-0.5 * self.log_scale)

    def from_nodal(self, values):
        return np.asarray(values) * np.exp(0.5 * self.log_scale)


def _truncated(profile: ProfileCurve, s_trunc, spacing):
    sub = spacing / profile.step
    k = int(round(sub))
    if k < 2 or k % 2 or abs(k - sub) > 1e-9 * k:
        raise ValueError("node spacing must be an even multiple of the profile step")
    if s_trunc > profile.s[-1] + 1e-9 or -s_trunc < profile.s[0] - 1e-9:
        raise ValueError(f"s_trunc={s_trunc} exceeds the computed profile range")
    ne = s_trunc / spacing
    if abs(ne - round(ne)) > 1e-9 * ne:
        raise ValueError("s_trunc must be a multiple of the node spacing")
    return profile.restrict(-s_trunc, s_trunc), k


def assemble_form(profile: ProfileCurve, s_trunc, spacing, log_weight, potential, m=0, beta=0.25):
    """Galerkin matrices of int (g'^2 + V g^2) e^{log_weight} ds and int g^2 e^{log_weight} ds.

    ``log_weight`` and ``potential`` are sampled on ``profile``, which must
    already be restricted to [-s_trunc, s_trunc].
    """
    sub = int(round(spacing / profile.step))
    N = profile.size - 1
    if N % sub:
        raise ValueError("profile samples do not align with the nodes")
    nodes = np.arange(0, N + 1, sub)
    ne = nodes.size - 1
    idx = nodes[:-1, None] + np.arange(sub + 1)[None, :]
    wS = simpson_weights(sub, profile.step)
    t = np.linspace(0.0, 1.0, sub + 1)
    p0, p1 = 1.0 - t, t
    lw = log_weight[idx]
    Ve = potential[idx]
    la = log_weight[nodes[:-1]][:, None]
    lb = log_weight[nodes[1:]][:, None]
    with np.errstate(over="raise"):
        try:
            def quad(f, c):
                return np.sum(wS * f * np.exp(lw - c), axis=1)

            d = 1.0 / spacing ** 2
            Kaa = quad(d + Ve * p0 * p0, la)
            Kbb = quad(d + Ve * p1 * p1, lb)
            Kab = quad(-d + Ve * p0 * p1, 0.5 * (la + lb))
            Maa = quad(p0 * p0, la)
            Mbb = quad(p1 * p1, lb)
            Mab = quad(p0 * p1, 0.5 * (la + lb))
        except FloatingPointError as exc:
            raise OverflowGuard("weight overflow during assembly") from exc
    Kd = np.zeros(ne + 1)
    Md = np.zeros(ne + 1)
    Kd[:-1] += Kaa
    Kd[1:] += Kbb
    Md[:-1] += Maa
    Md[1:] += Mbb
    Kd, Md, Ko, Mo = Kd[1:-1], Md[1:-1], Kab[1:-1], Mab[1:-1]
    if np.any(Md <= 0) or np.any(Md[:-1] * Md[1:] <= Mo ** 2 * 1.0000001) and Md.size > 1:
        raise OverflowGuard("mass matrix is not positive definite")
    K = sp.diags([Ko, Kd, Ko], [-1, 0, 1], format="csr")
    M = sp.diags([Mo, Md, Mo], [-1, 0, 1], format="csr")
    inner = nodes[1:-1]
    return K, M, profile.s[inner], log_weight[inner]


def _jacobi_potential(profile, m):
    curv = curvature(profile)
    lam = m * (m + profile.n - 2)
    return lam / profile.r ** 2 - curv.normA2 + 0.5


def assemble_jacobi(exp: RotationalExpander | ProfileCurve, m=0, s_trunc=10.0, spacing=0.004):
    """Weighted Jacobi form of mode ``m`` on the mirrored expander profile."""
    full = exp.full_profile if isinstance(exp, RotationalExpander) else exp
    if isinstance(exp, RotationalExpander) and not exp.residual_sup < exp.options.solve_tol:
        raise PreconditionError("expander residual certificate is not valid")
    # curvature on the untruncated profile keeps one-sided stencils away from the cut
    pot_full = _jacobi_potential(full, m)
    lw_full = full.log_area_density + 0.25 * full.x2
    prof, _ = _truncated(full, s_trunc, spacing)
    keep = (full.s >= -s_trunc - 1e-9 * full.step) & (full.s <= s_trunc + 1e-9 * full.step)
    pot = pot_full[keep]
    lw = lw_full[keep]
    K, M, nodes, ls = assemble_form(prof, s_trunc, spacing, lw, pot, m)
    return WeightedOperator(m, prof.n, 0.25, K, M, nodes, ls, float(s_trunc), float(spacing), pot, prof)


@dataclass(frozen=True)
class Eigenpair:
    """Eigenvalue of -L in one mode and its radial factor at the interior nodes."""

    mu: float
    m: int
    nodes: np.ndarray
    values: np.ndarray
    s_trunc: float
    residual: float

    def spline(self):
        s = np.concatenate([[-self.s_trunc], self.nodes, [self.s_trunc]])
        v = np.concatenate([[0.0], self.values, [0.0]])
        return CubicSpline(s, v)

    def sample(self, profile: ProfileCurve):
        """Values and first two derivatives on ``profile``; zero beyond the truncation."""
        cs = self.spline()
        inside = np.abs(profile.s) <= self.s_trunc
        out = []
        for k in range(3):
            v = np.zeros(profile.size)
            v[inside] = cs(profile.s[inside], k)
            out.append(v)
        return tuple(out)


def spectrum(op: WeightedOperator, k=4):
    """The ``k`` smallest eigenpairs of (stiffness, mass), ascending."""
    N = op.size
    if k > N:
        warnings.warn(f"requested {k} eigenpairs but the operator has size {N}; clamping")
        k = N
    if N <= 400 or k >= N - 1:
        w, v = sla.eigh(op.stiffness.toarray(), op.mass.toarray())
        w, v = w[:k], v[:, :k]
    else:
        sigma = float(np.min(op.potential)) - 1.0
        v0 = np.ones(N)
        w, v = spl.eigsh(op.stiffness.tocsc(), k, op.mass.tocsc(), sigma=sigma, which="LM", v0=v0, tol=0)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    pairs = []
    for i in range(k):
        x = v[:, i]
        Mx = op.mass @ x
        res = float(np.linalg.norm(op.stiffness @ x - w[i] * Mx) / np.linalg.norm(Mx))
        u = op.to_nodal(x)
        j = int(np.argmax(np.abs(u)))
        u = u * math.copysign(1.0, u[j])
        pairs.append(Eigenpair(float(w[i]), op.m, op.nodes, u, op.s_trunc, res))
    return pairs


def apply_operator(op: WeightedOperator, g_nodes):
    """Pointwise approximation of -L_m g at the interior nodes (lumped mass)."""
    y = op.from_nodal(g_nodes)
    ones = op.from_nodal(np.ones(op.size))
    return (op.stiffness @ y) / (op.mass @ ones)


def killing_field(profile: ProfileCurve):
    """Radial factor x.T of the mode-1 Jacobi field of a rotation tilting the axis."""
    return profile.xdotT


def killing_residual(exp, spacing=0.004, s_trunc=10.0, margin=2.0):
    """max |L_1 (x.T)| over interior nodes at distance >= ``margin`` from the cut."""
    op = assemble_jacobi(exp, 1, s_trunc, spacing)
    g = np.interp(op.nodes, op.profile.s, killing_field(op.profile))
    res = apply_operator(op, g)
    inner = np.abs(op.nodes) <= s_trunc - margin
    scale = float(np.max(np.abs(g[inner])))
    return float(np.max(np.abs(res[inner]))), scale


@dataclass(frozen=True)
class DecayFit:
    beta_fit: float
    band: float
    sense: str
    window: tuple


def decay_fit(u, profile: ProfileCurve, mu=None, sense="integral", window=(4.0, 8.0)):
    """Gaussian decay rate of ``u`` sampled on ``profile`` (the z >= 0 end is used).

    ``sense="pointwise"`` fits -log|u| = a + beta |x|^2, the rate at which u
    itself decays.  ``sense="integral"`` fits -log u^2 = a + beta |x|^2 + c log|x|,
    which is the threshold beta below which int u^2 e^{beta |x|^2} converges.
    The band is the spread of beta over the two halves of the window.
    """
    if mu is not None and mu > 0.25:
        raise PreconditionError("decay estimate applies for mu <= 1/4")
    u = np.asarray(u, float)
    if sense not in ("pointwise", "integral"):
        raise ValueError("sense must be 'pointwise' or 'integral'")
    rho = profile.radius

    def fit(a, b):
        m = (rho >= a) & (rho <= b) & (profile.z >= 0)
        if np.count_nonzero(m) < 10:
            raise FitUnreliable("too few samples in the decay window")
        um = u[m]
        if np.any(um == 0) or np.ptp(np.sign(um)) > 0:
            raise FitUnreliable("eigenfunction vanishes or changes sign inside the decay window")
        x = rho[m] ** 2
        if sense == "pointwise":
            y = -np.log(np.abs(um))
            A = np.column_stack([np.ones_like(x), x])
        else:
            y = -2.0 * np.log(np.abs(um))
            A = np.column_stack([np.ones_like(x), x, np.log(x)])
        return float(np.linalg.lstsq(A, y, rcond=None)[0][1])

    a, b = window
    beta = fit(a, b)
    mid = 0.5 * (a + b)
    band = max(abs(fit(a, mid) - beta), abs(fit(mid, b) - beta))
    return DecayFit(beta, band, sense, (a, b))


@dataclass(frozen=True)
class ModeSpectrum:
    m: int
    mults: int
    eigs: tuple
    pairs: tuple = field(repr=False)
    negcount: int
    nearzero: int
    decay: tuple = ()


@dataclass(frozen=True)
class SpectrumReport:
    modes: tuple
    index: int
    nullity: int
    gap: float
    guard_mu: float
    delta: float = float("nan")
    branch: str = ""
    r0: float = float("nan")

    def to_json(self):
        return {
            "delta": self.delta,
            "branch": self.branch,
            "r0": self.r0,
            "modes": [{"m": md.m, "mults": md.mults, "eigs": list(md.eigs)} for md in self.modes],
            "index": self.index,
            "nullity": self.nullity,
        }

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def morse_index(exp: RotationalExpander, m_max=2, null_tol=1e-6, k=4, s_trunc=10.0, spacing=0.004,
                branch="", decay_window=(4.0, 8.0)):
    """Index and nullity of -L on ``exp`` summed over modes 0..m_max.

    Mode m_max + 1 is solved as a guard: if its lowest eigenvalue is not
    positive then higher modes may still contribute and IndexIncomplete is
    raised.
    """
    modes = []
    mins = []
    for m in range(m_max + 2):
        op = assemble_jacobi(exp, m, s_trunc, spacing)
        pairs = spectrum(op, k)
        eigs = tuple(p.mu for p in pairs)
        mins.append(eigs[0])
        if m == m_max + 1:
            break
        fits = []
        for p in pairs:
            if p.mu <= 0.25:
                vals, _, _ = p.sample(op.profile)
                try:
                    fits.append(decay_fit(vals, op.profile, p.mu, window=decay_window))
                except FitUnreliable:
                    fits.append(None)
        neg = sum(1 for e in eigs if e < -null_tol)
        zero = sum(1 for e in eigs if abs(e) <= null_tol)
        modes.append(ModeSpectrum(m, mode_multiplicity(m, exp.n), eigs, tuple(pairs), neg, zero, tuple(fits)))
    guard = mins[-1]
    if not guard > 0:
        raise IndexIncomplete(f"mode {m_max + 1} still has eigenvalue {guard:.4g}; raise m_max")
    index = sum(md.mults * md.negcount for md in modes)
    nullity = sum(md.mults * md.nearzero for md in modes)
    gap = min(abs(e) for md in modes for e in md.eigs)
    return SpectrumReport(tuple(modes), index, nullity, gap, guard, exp.delta_fit, branch, exp.r0)


def concentration_check(pair: Eigenpair, profile: ProfileCurve, eps, margin=1.0):
    """Smallest radius R1 with int_{|x|>R1} (|grad u|^2 + u^2) e^{3|x|^2/8} <= eps B[u].

    ``profile`` is the full (mirrored) profile the eigenpair lives on.  The
    tail is evaluated on the samples and R1 is located by interpolating its
    logarithm.  Radii within ``margin`` of the truncation do not count.
    """
    if pair.mu > 0.25:
        raise PreconditionError("concentration estimate applies for mu <= 1/4")
    prof = profile.restrict(-pair.s_trunc, pair.s_trunc)
    u, du, _ = pair.sample(prof)
    lam = pair.m * (pair.m + prof.n - 2)
    grad2 = du ** 2 + lam * u ** 2 / prof.r ** 2
    w = prof.quadrature_weights()
    lw_tail = prof.log_area_density + 0.375 * prof.x2
    lw_tot = prof.log_area_density + 0.25 * prof.x2
    c = float(np.max(lw_tail))
    dens_tail = (grad2 + u ** 2) * np.exp(lw_tail - c) * w
    dens_tot = u ** 2 * np.exp(lw_tot - c) * w
    total = float(np.sum(dens_tot))
    rho = prof.radius
    order = np.argsort(rho)[::-1]
    tail = np.cumsum(dens_tail[order])
    radii = rho[order]
    # tail(R) for R decreasing; R1 is the smallest radius whose tail is below target
    target = eps * total
    rho_cut = min(rho[0], rho[-1]) - margin
    ok = tail <= target
    if not ok[np.searchsorted(-radii, -rho_cut)]:
        raise TruncationTooSmall(f"tail exceeds eps*B[u] even at |x| = {rho_cut:.3g}")
    j = int(np.argmin(ok))  # first failing index (tail is nondecreasing along order)
    if ok.all():
        return float(radii[-1])
    if j == 0:
        return float(radii[0])
    # log-linear interpolation between the last passing and the first failing radius
    t0, t1 = math.log(tail[j - 1]), math.log(tail[j])
    frac = (math.log(target) - t0) / (t1 - t0) if t1 > t0 else 1.0
    return float(radii[j - 1] + frac * (radii[j] - radii[j - 1]))


def iso_conditioning(exp: RotationalExpander, beta, f_values, s_trunc=10.0, spacing=0.004, pivot_tol=1e-13):
    """Solve (Delta + x.grad/2 - 1/2) u = f for rotationally symmetric f.

    Returns the nodal solution spline samples on the truncated profile and
    the ratio ||u||_{W^2_beta} / ||f||_{W^0_beta}.  ``f_values`` are samples
    on the truncated mirrored profile.
    """
    if not 0.25 <= beta <= 0.375:
        raise PreconditionError("beta must lie in [1/4, 3/8]")
    full = exp.full_profile
    prof, _ = _truncated(full, s_trunc, spacing)
    f = np.asarray(f_values, float)
    if f.shape != prof.s.shape:
        raise ValueError("f must be sampled on the truncated profile")
    lw = prof.log_area_density + 0.25 * prof.x2
    pot = np.full(prof.size, 0.5)
    K, M, nodes, ls = assemble_form(prof, s_trunc, spacing, lw, pot)
    # load vector -int f phi_i w ds, rescaled by e^{-l_i/2}
    sub = int(round(spacing / prof.step))
    N = prof.size - 1
    nd = np.arange(0, N + 1, sub)
    idx = nd[:-1, None] + np.arange(sub + 1)[None, :]
    wS = simpson_weights(sub, prof.step)
    t = np.linspace(0.0, 1.0, sub + 1)
    lwa = lw[nd[:-1]][:, None]
    lwb = lw[nd[1:]][:, None]
    Fa = np.sum(wS * f[idx] * (1 - t) * np.exp(lw[idx] - lwa / 2), axis=1)
    Fb = np.sum(wS * f[idx] * t * np.exp(lw[idx] - lwb / 2), axis=1)
    load = np.zeros(nd.size)
    load[:-1] += Fa
    load[1:] += Fb
    load = -load[1:-1]
    if not np.any(load):
        u_nodes = np.zeros(nodes.size)
    else:
        lu = spl.splu(K.tocsc())
        piv = np.abs(lu.U.diagonal())
        if piv.min() < pivot_tol * piv.max():
            raise SingularityFlag("discrete operator is numerically singular")
        y = lu.solve(load)
        u_nodes = y * np.exp(-0.5 * ls)
    s_all = np.concatenate([[-s_trunc], nodes, [s_trunc]])
    cs = CubicSpline(s_all, np.concatenate([[0.0], u_nodes, [0.0]]))
    u, du, d2u = cs(prof.s), cs(prof.s, 1), cs(prof.s, 2)
    nf = weighted_norm(prof, f, np.zeros_like(f), beta, order=0, strict=False)
    nu = weighted_norm(prof, u, du, beta, order=2, hess=d2u, strict=False)
    ratio = nu / nf if nf > 0 else 0.0
    return u, ratio
