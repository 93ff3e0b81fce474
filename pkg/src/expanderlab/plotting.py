"""SVG figures: profile curves, the delta(r0) shooting curve and eigenvalue-vs-delta diagrams."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_profiles", "plot_delta_curve", "plot_eigen_diagram"]

# fixed element ids and no timestamp so reruns give identical files
matplotlib.rcParams["svg.hashsalt"] = "expanderlab"
matplotlib.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": "expanderlab"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_profiles(curves, path, cones=()):
    """``curves`` is a list of (label, r, z).  Cone slopes in ``cones`` are drawn dashed."""
    rmax = max((float(np.max(r)) for _, r, _ in curves), default=1.0)
    zmax = max((float(np.max(np.abs(z))) for _, _, z in curves), default=1.0)
    height = float(np.clip(5.0 * 2 * zmax / rmax, 2.5, 8.0))
    fig, ax = plt.subplots(figsize=(5.0, height))
    for label, r, z in curves:
        ax.plot(r, z, lw=1.2, label=label)
    for d in cones:
        zz = np.array([-zmax, 0.0, zmax])
        ax.plot(d * np.abs(zz), zz, "k--", lw=0.6)
    ax.set_xlim(0, rmax * 1.05)
    ax.set_ylim(-zmax * 1.05, zmax * 1.05)
    ax.set_aspect("equal", adjustable="box")
    ax.set_xlabel("r")
    ax.set_ylabel("z")
    if curves:
        ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    _save(fig, path)


def plot_delta_curve(r0, delta, path, delta_star=None, r0_star=None):
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    r0 = np.asarray(r0, float)
    delta = np.asarray(delta, float)
    ok = np.isfinite(delta)
    ax.plot(r0[ok], delta[ok], "o-", ms=2.5, lw=1.0)
    if delta_star is not None:
        ax.axhline(delta_star, color="k", ls=":", lw=0.8)
        if r0_star is not None:
            ax.plot([r0_star], [delta_star], "rx")
    ax.set_xscale("log")
    ax.set_xlabel("neck radius r0")
    ax.set_ylabel("cone slope delta")
    fig.tight_layout()
    _save(fig, path)


def plot_eigen_diagram(records, path):
    """``records`` is a list of (delta, branch, m, mu); one marker style per branch."""
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    styles = {}
    for delta, branch, m, mu in sorted(records, key=lambda t: (t[1], t[2], t[0])):
        key = (branch, m)
        if key not in styles:
            styles[key] = ax.plot([], [], "os^v"[len(styles) % 4], ms=4, label=f"{branch or 'branch'} m={m}")[0]
        line = styles[key]
        line.set_data(np.append(line.get_xdata(), delta), np.append(line.get_ydata(), mu))
    ax.axhline(0.0, color="k", lw=0.6)
    ax.relim()
    ax.autoscale_view()
    ax.set_xlabel("cone slope delta")
    ax.set_ylabel("eigenvalue of -L")
    if styles:
        ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    _save(fig, path)
