"""Signed count of rotationally symmetric annular expanders asymptotic to a double cone.

Only the rotationally symmetric class is enumerated, so the degree reported
here is a surrogate for the count over all asymptotically conical annuli.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ExpanderLabError, FoldProximity, IndexIncomplete
from .shooting import DEFAULT, ShootingOptions, find_branches, find_delta_star, solve_expander
from .spectral import assemble_jacobi, morse_index, spectrum

__all__ = [
    "Solution",
    "DegreeReport",
    "SweepResult",
    "FoldReport",
    "signed_count",
    "degree_at",
    "degree_sweep",
    "write_degree_csv",
    "fold_nullity_check",
    "delta_star_cached",
    "suggest_grid",
    "parse_grid",
]


@dataclass(frozen=True)
class Solution:
    r0: float
    index: int
    nullity: int = 0
    residual_sup: float = 0.0


def signed_count(indices):
    return int(sum((-1) ** int(i) for i in indices))


@dataclass(frozen=True)
class DegreeReport:
    delta: float
    solutions: tuple = ()
    flags: tuple = ()
    degree: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "degree", signed_count(s.index for s in self.solutions))

    @property
    def ok(self):
        return not self.flags

    @property
    def indices(self):
        return [s.index for s in self.solutions]

    def to_json(self):
        return {"delta": self.delta, "degree": self.degree, "flags": list(self.flags),
                "solutions": [{"r0": s.r0, "index": s.index, "nullity": s.nullity,
                               "residual_sup": s.residual_sup} for s in self.solutions]}


_DSTAR = {}


def delta_star_cached(n=2, options: ShootingOptions = DEFAULT):
    key = (n, options)
    if key not in _DSTAR:
        bracket = (0.3, 2.0) if n == 2 else (0.3, 1.5 * n)
        _DSTAR[key] = find_delta_star(n, bracket, options=options)
    return _DSTAR[key]


def _exclusion(delta, delta_star, fold_tol):
    zone = 10 * fold_tol
    if abs(delta - delta_star) <= zone:
        raise FoldProximity(f"delta={delta:.10g} is within {zone:g} of the fold {delta_star:.10g}",
                            delta, delta_star, (delta_star - 2 * zone, delta_star + 2 * zone))


def degree_at(delta, n=2, m_max=2, delta_star=None, fold_tol=1e-4, null_tol=1e-6,
              options: ShootingOptions = DEFAULT, s_trunc=10.0, spacing=0.004):
    """Find every symmetric annulus with cone slope ``delta`` and sum (-1)^index.

    Raises FoldProximity inside |delta - delta*| <= 10 fold_tol, where the
    solutions are degenerate and delta is not a regular value.
    IndexIncomplete from the spectral solve is propagated.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if delta_star is None:
        delta_star = delta_star_cached(n, options).delta_star
    _exclusion(delta, delta_star, fold_tol)
    sols = []
    flags = []
    for exp in find_branches(delta, n, options=options):
        rep = morse_index(exp, m_max, null_tol, s_trunc=s_trunc, spacing=spacing)
        sols.append(Solution(exp.r0, rep.index, rep.nullity, exp.residual_sup))
        if rep.nullity:
            flags.append(f"nullity at r0={exp.r0:.6g}")
    return DegreeReport(float(delta), tuple(sols), tuple(flags))


@dataclass(frozen=True)
class SweepResult:
    reports: tuple
    delta_star: float
    verdict: bool
    below: tuple
    above: tuple


def _one(args):
    delta, n, m_max, delta_star, fold_tol, options = args
    try:
        return degree_at(delta, n, m_max, delta_star, fold_tol, options=options)
    except FoldProximity:
        return DegreeReport(float(delta), (), ("fold-proximity",))
    except IndexIncomplete:
        return DegreeReport(float(delta), (), ("index-incomplete",))
    except ExpanderLabError as e:
        return DegreeReport(float(delta), (), (f"error: {type(e).__name__}",))


def degree_sweep(deltas, n=2, m_max=2, delta_star=None, fold_tol=1e-4,
                 options: ShootingOptions = DEFAULT, workers=1, expected=0):
    """Degree at every grid value; PASS iff all unflagged degrees equal ``expected``.

    Grid points are grouped by side of delta*.  Flagged points (fold proximity,
    incomplete index, solver errors) fail the verdict but the sweep continues.
    """
    if delta_star is None:
        delta_star = delta_star_cached(n, options).delta_star
    jobs = [(float(d), n, m_max, delta_star, fold_tol, options) for d in deltas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = tuple(pool.map(_one, jobs))
    else:
        reports = tuple(_one(j) for j in jobs)
    below = tuple(r.degree for r in reports if r.delta < delta_star and r.ok)
    above = tuple(r.degree for r in reports if r.delta > delta_star and r.ok)
    verdict = all(r.ok for r in reports) and all(d == expected for d in below + above)
    return SweepResult(reports, float(delta_star), bool(verdict), below, above)


def write_degree_csv(result, path):
    reports = result.reports if isinstance(result, SweepResult) else result
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "n_solutions", "indices", "degree", "flags"])
        for r in reports:
            w.writerow([repr(r.delta), len(r.solutions), ";".join(str(i) for i in r.indices), r.degree,
                        ";".join(r.flags)])


@dataclass(frozen=True)
class FoldReport:
    delta_star: float
    r0_star: float
    mu_fold: tuple          # lowest m = 0 eigenvalue at the fold for each spacing
    spacings: tuple
    offsets: tuple          # r0 - r0* for the branch samples
    mu_branch: tuple        # lowest m = 0 eigenvalue along the family
    mu_far: tuple           # lowest m = 0 eigenvalue on both branches at delta = 2 delta*
    fold_tol: float

    @property
    def at_fold(self):
        return abs(self.mu_fold[-1]) < self.fold_tol

    @property
    def refining(self):
        a = np.abs(self.mu_fold)
        return bool(np.all(np.diff(a) < 0))

    @property
    def sign_change(self):
        lo = [m for o, m in zip(self.offsets, self.mu_branch) if o < 0]
        hi = [m for o, m in zip(self.offsets, self.mu_branch) if o > 0]
        return bool(lo and hi and max(lo) < 0 < min(hi))

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.mu_branch) > 0))

    @property
    def far_ok(self):
        return all(abs(m) > 10 * self.fold_tol for m in self.mu_far)

    @property
    def passed(self):
        return self.at_fold and self.sign_change and self.monotone and self.far_ok

    def to_json(self):
        return {"delta_star": self.delta_star, "r0_star": self.r0_star, "spacings": list(self.spacings),
                "mu_fold": list(self.mu_fold), "offsets": list(self.offsets),
                "mu_branch": list(self.mu_branch), "mu_far": list(self.mu_far),
                "fold_tol": self.fold_tol, "passed": self.passed}


def _mu0(exp, s_trunc, spacing):
    return spectrum(assemble_jacobi(exp, 0, s_trunc, spacing), 1)[0].mu


def fold_nullity_check(n=2, fold_tol=1e-4, spacings=(0.008, 0.004, 0.002), offsets=(-0.04, -0.02, -0.01, 0.01, 0.02, 0.04),
                       s_trunc=10.0, options: ShootingOptions = DEFAULT):
    """Lowest m = 0 Jacobi eigenvalue at the fold, along the family across it, and far from it.

    Moving r0 through r0* crosses from the small-neck to the large-neck branch.
    BracketError from locating delta* is propagated.
    """
    ds = delta_star_cached(n, options)
    fold = solve_expander(ds.r0_star, n, options)
    mu_fold = tuple(_mu0(fold, s_trunc, h) for h in spacings)
    h = spacings[len(spacings) // 2]
    mu_branch = tuple(_mu0(solve_expander(ds.r0_star + o, n, options), s_trunc, h) for o in offsets)
    far = find_branches(2 * ds.delta_star, n, options=options)
    mu_far = tuple(_mu0(e, s_trunc, h) for e in far)
    return FoldReport(ds.delta_star, ds.r0_star, mu_fold, tuple(spacings), tuple(offsets), mu_branch, mu_far,
                      fold_tol)


def suggest_grid(delta_star, fractions=(0.5, 0.8, 1.2, 1.5, 2.0)):
    return [f * delta_star for f in fractions]


def parse_grid(text):
    """'a:b:k' -> k evenly spaced values in [a, b]; a comma list is also accepted."""
    if ":" in text:
        a, b, k = text.split(":")
        k = int(k)
        if k < 1:
            raise ValueError("grid needs at least one point")
        return list(np.linspace(float(a), float(b), k))
    return [float(x) for x in text.split(",") if x.strip()]

