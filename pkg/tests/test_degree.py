import csv
import json

import pytest

from expanderlab.degree import (DegreeReport, FoldReport, Solution, degree_at, degree_sweep, parse_grid,
                                signed_count, suggest_grid, write_degree_csv)
from expanderlab.errors import FoldProximity


def test_signed_count():
    assert signed_count([]) == 0
    assert signed_count([0, 1]) == 0
    assert signed_count([0, 1, 2]) == 1
    assert signed_count([1, 3]) == -2


def test_report_synthetic():
    rep = DegreeReport(1.0, tuple(Solution(r, i) for r, i in ((0.1, 0), (0.2, 1), (0.3, 2))))
    assert rep.degree == 1 and rep.indices == [0, 1, 2] and rep.ok
    d = json.loads(json.dumps(rep.to_json()))
    assert d["degree"] == 1 and len(d["solutions"]) == 3
    assert not DegreeReport(1.0, (), ("fold-proximity",)).ok


def test_grid_helpers():
    assert parse_grid("1:2:3") == [1.0, 1.5, 2.0]
    assert parse_grid("0.5, 1.5") == [0.5, 1.5]
    with pytest.raises(ValueError):
        parse_grid("1:2:0")
    assert suggest_grid(2.0) == [1.0, 1.6, 2.4, 3.0, 4.0]


def test_fold_exclusion(dstar):
    with pytest.raises(FoldProximity) as ei:
        degree_at(dstar.delta_star + 5e-4, delta_star=dstar.delta_star)
    lo, hi = ei.value.suggestions
    assert lo < dstar.delta_star < hi
    with pytest.raises(ValueError):
        degree_at(-1.0)


def test_degree_below_fold(dstar):
    rep = degree_at(0.8 * dstar.delta_star, delta_star=dstar.delta_star)
    assert rep.solutions == () and rep.degree == 0 and rep.ok


def test_degree_above_fold(dstar):
    rep = degree_at(1.2 * dstar.delta_star, delta_star=dstar.delta_star)
    assert rep.ok and rep.degree == 0
    assert sorted(rep.indices) == [0, 1]
    small = min(rep.solutions, key=lambda s: s.r0)
    assert small.index == 1 and small.r0 == pytest.approx(0.36914, abs=1e-4)


def test_sweep_parallel_matches_serial_and_csv(dstar, tmp_path):
    grid = [0.5 * dstar.delta_star, 1.2 * dstar.delta_star, dstar.delta_star]
    a = degree_sweep(grid, delta_star=dstar.delta_star)
    b = degree_sweep(grid, delta_star=dstar.delta_star, workers=2)
    assert [r.to_json() for r in a.reports] == [r.to_json() for r in b.reports]
    # the point on the fold is flagged, which fails the verdict without aborting the sweep
    assert a.reports[2].flags == ("fold-proximity",)
    assert not a.verdict and a.below == (0,) and a.above == (0,)
    path = tmp_path / "d.csv"
    write_degree_csv(a, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["delta", "n_solutions", "indices", "degree", "flags"]
    assert rows[2][1] == "2" and rows[3][4] == "fold-proximity"


def test_fold_report_logic():
    rep = FoldReport(2.0, 0.8, (3e-5, 8e-6, 2e-6), (0.008, 0.004, 0.002), (-0.02, -0.01, 0.01, 0.02),
                     (-0.04, -0.02, 0.02, 0.04), (-20.0, 0.9), 1e-4)
    assert rep.at_fold and rep.refining and rep.sign_change and rep.monotone and rep.far_ok and rep.passed
    bad = FoldReport(2.0, 0.8, (3e-3,), (0.004,), (-0.01, 0.01), (0.01, 0.02), (1.0,), 1e-4)
    assert not bad.at_fold and not bad.sign_change and not bad.passed
