"""Command-line front end.

Exit codes: 0 success, 2 usage or unreadable input, 3 numeric failure (also
an empty solution set or a failed audit/verdict), 4 precondition or guard.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from .config import load_config
from .errors import (ExpanderLabError, FoldProximity, IndexIncomplete, OverflowGuard, PreconditionError,
                     TruncationTooSmall)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_GUARD = 0, 2, 3, 4
GUARDS = (FoldProximity, PreconditionError, IndexIncomplete, TruncationTooSmall, OverflowGuard)


def _dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _out_dir(args, cfg):
    d = args.out or os.environ.get("EXPANDERLAB_OUT") or cfg.out
    os.makedirs(d, exist_ok=True)
    return d


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _positive(text):
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _load_expander(path, cfg):
    from .shooting import RotationalExpander
    return RotationalExpander.from_json(_read_json(path), cfg.shooting_options())


def cmd_solve(args, cfg):
    from .shooting import find_branches, solve_expander
    opts = cfg.shooting_options()
    out = _out_dir(args, cfg)
    if args.r0 is not None:
        exps = [solve_expander(args.r0, cfg.n, opts)]
    else:
        from .degree import delta_star_cached
        ds = delta_star_cached(cfg.n, opts).delta_star
        if abs(args.delta - ds) <= 10 * cfg.fold_tol:
            raise FoldProximity(f"delta={args.delta} is within {10 * cfg.fold_tol:g} of the fold {ds:.10g}",
                                args.delta, ds, (ds - 20 * cfg.fold_tol, ds + 20 * cfg.fold_tol))
        exps = find_branches(args.delta, cfg.n, options=opts)
    summary = []
    for k, e in enumerate(exps):
        name = os.path.join(out, f"expander_{k}.json")
        _dump(e.to_json(), name)
        summary.append({"file": name, "r0": e.r0, "delta": e.delta_fit, "fit_error": e.fit_error,
                        "residual_sup": e.residual_sup, "certified": e.residual_sup < opts.solve_tol})
    sys.stdout.write(_dump({"n": cfg.n, "delta": args.delta, "r0": args.r0, "solutions": summary}))
    return EXIT_OK if summary else EXIT_NUMERIC


def cmd_spectrum(args, cfg):
    from .spectral import morse_index
    exp = _load_expander(args.input, cfg)
    rep = morse_index(exp, args.modes, cfg.null_tol, k=args.k, s_trunc=cfg.s_trunc, spacing=cfg.spacing,
                      branch=args.branch or "")
    out = _out_dir(args, cfg)
    d = rep.to_json()
    d["guard_mu"] = rep.guard_mu
    _dump(d, os.path.join(out, "spectrum.json"))
    sys.stdout.write(_dump(d))
    return EXIT_OK


def cmd_degree(args, cfg):
    from .degree import degree_sweep, delta_star_cached, parse_grid, suggest_grid, write_degree_csv
    opts = cfg.shooting_options()
    ds = delta_star_cached(cfg.n, opts)
    grid = parse_grid(args.delta_grid) if args.delta_grid else suggest_grid(ds.delta_star)
    res = degree_sweep(grid, cfg.n, cfg.m_max, ds.delta_star, cfg.fold_tol, opts, workers=cfg.threads)
    out = _out_dir(args, cfg)
    path = os.path.join(out, "degree.csv")
    write_degree_csv(res, path)
    verdict = "PASS" if res.verdict else "FAIL"
    sys.stdout.write(_dump({"delta_star": res.delta_star, "csv": path, "verdict": verdict,
                            "reports": [r.to_json() for r in res.reports]}))
    if any("fold-proximity" in r.flags for r in res.reports):
        return EXIT_GUARD
    return EXIT_OK if res.verdict else EXIT_NUMERIC


def cmd_torus(args, cfg):
    from .torus import avoidance_check, integrate_shrinker_torus
    tor = integrate_shrinker_torus(cfg.n)
    out = _out_dir(args, cfg)
    _dump(tor.to_json(), os.path.join(out, "torus.json"))
    summary = {"n": cfg.n, "Rminus": tor.Rminus, "Rplus": tor.Rplus, "delta0": tor.delta0,
               "delta0_refined": tor.delta0_refined, "closure_gap": tor.closure_gap,
               "residual_sup": tor.residual_sup}
    if args.expander:
        exp = _load_expander(args.expander, cfg)
        rep = avoidance_check(exp, tor, args.t_steps, force=args.force)
        summary["avoidance"] = {"min_distance": rep.min_distance, "t_min": rep.t_min,
                                "precondition_ok": rep.precondition_ok, "broken": list(rep.broken),
                                "cone_distance": rep.cone_distance}
    sys.stdout.write(_dump(summary))
    if args.expander and not summary["avoidance"]["min_distance"] > 0:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_audit(args, cfg):
    from .forms import audit_json, run_audit
    from .shooting import solve_expander
    exp = _load_expander(args.input, cfg) if args.input else solve_expander(args.r0, cfg.n, cfg.shooting_options())
    if args.samples == 0:
        warnings.warn("zero samples: the audit passes vacuously")
    recs = run_audit(args.suite, exp, args.samples, cfg.seed, cfg.threads)
    out = _out_dir(args, cfg)
    text = audit_json(recs) + "\n"
    with open(os.path.join(out, f"audit_{args.suite}.json"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK if all(r["pass"] for r in recs) else EXIT_NUMERIC


def cmd_sweep(args, cfg):
    from .shooting import grid_minimum, shooting_map, write_sweep_csv
    a, b, k = args.r0_grid.split(":")
    grid = np.geomspace(float(a), float(b), int(k))
    samples = shooting_map(grid, cfg.n, cfg.shooting_options(), workers=cfg.threads)
    out = _out_dir(args, cfg)
    path = os.path.join(out, "sweep.csv")
    write_sweep_csv(samples, path)
    vm = grid_minimum([s.r0 for s in samples], [s.delta for s in samples])
    sys.stdout.write(_dump({"csv": path, "points": len(samples),
                            "failures": sum(not s.ok for s in samples),
                            "grid_minimum": None if vm is None else {"r0": vm[0], "delta": vm[1]}}))
    return EXIT_OK


def _read_sweep(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["r0"]) for r in rows], [float(r["delta"]) for r in rows]


def cmd_plot(args, cfg):
    from . import plotting
    if args.kind == "profiles":
        curves, cones = [], []
        for p in args.input:
            d = _read_json(p)
            r = np.array([q["r"] for q in d["samples"]])
            z = np.array([q["z"] for q in d["samples"]])
            if "delta" in d:
                r, z = np.concatenate([r[::-1], r]), np.concatenate([-z[::-1], z])
                cones.append(d["delta"])
            curves.append((os.path.basename(p), r, z))
        plotting.plot_profiles(curves, args.svg, cones)
    elif args.kind == "delta":
        r0, delta = _read_sweep(args.input[0])
        plotting.plot_delta_curve(r0, delta, args.svg, args.delta_star)
    else:
        recs = []
        for p in args.input:
            d = _read_json(p)
            for md in d["modes"]:
                for mu in md["eigs"]:
                    recs.append((d["delta"], d.get("branch", ""), md["m"], mu))
        plotting.plot_eigen_diagram(recs, args.svg)
    sys.stdout.write(_dump({"svg": args.svg}))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("--n", type=int, help="surface dimension (>= 2)")
    common.add_argument("--out", help="output directory (else $EXPANDERLAB_OUT, else the config value)")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)

    ap = argparse.ArgumentParser(prog="expanderlab", description="Rotationally symmetric self-expanders: "
                                 "shooting, Jacobi spectra, degree counts and barrier checks.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve for an expander by neck radius or cone slope")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--r0", type=_positive)
    g.add_argument("--delta", type=_positive)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("spectrum", parents=[common], help="Morse index and nullity of a saved expander")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--modes", type=int, default=2, help="highest Fourier mode m counted")
    p.add_argument("--k", type=int, default=4, help="eigenvalues per mode")
    p.add_argument("--branch")
    p.set_defaults(fn=cmd_spectrum)

    p = sub.add_parser("degree", parents=[common], help="signed solution count over a grid of cone slopes")
    p.add_argument("--delta-grid", help="a:b:k or a comma list (default 0.5,0.8,1.2,1.5,2 times delta*)")
    p.set_defaults(fn=cmd_degree)

    p = sub.add_parser("torus", parents=[common], help="shrinking torus and its barrier constants")
    p.add_argument("--expander", help="expander JSON for the avoidance check")
    p.add_argument("--t-steps", type=int, default=100)
    p.add_argument("--force", action="store_true", help="run the avoidance check even if its precondition fails")
    p.set_defaults(fn=cmd_torus)

    p = sub.add_parser("audit", parents=[common], help="randomised identity and inequality audits")
    p.add_argument("--suite", choices=("poincare", "forms", "perturbation", "variation"), required=True)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--in", dest="input", help="expander JSON (default: solve at --r0)")
    p.add_argument("--r0", type=_positive, default=1.0)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("sweep", parents=[common], help="tabulate delta(r0) on a log grid")
    p.add_argument("--r0-grid", default="0.05:5:40", help="a:b:k")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plot", parents=[common], help="render SVG figures")
    p.add_argument("--kind", choices=("profiles", "delta", "eigen"), required=True)
    p.add_argument("--in", dest="input", nargs="+", required=True)
    p.add_argument("--svg", required=True)
    p.add_argument("--delta-star", type=float)
    p.set_defaults(fn=cmd_plot)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, n=args.n, seed=args.seed, threads=args.threads)
    except (OSError, ValueError) as e:
        ap.error(str(e))
    try:
        return args.fn(args, cfg)
    except GUARDS as e:
        print(f"expanderlab: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_GUARD
    except ExpanderLabError as e:
        print(f"expanderlab: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as e:
        print(f"expanderlab: cannot read input: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
