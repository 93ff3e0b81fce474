import csv
import dataclasses
import math

import numpy as np
import pytest

import expanderlab.shooting as sh
from expanderlab.errors import AxisCollision, BracketError, FitUnreliable, FoldProximity
from expanderlab.geometry import cone_profile, hyperplane_profile
from expanderlab.shooting import (DEFAULT, RotationalExpander, asymptotic_slope, expander_rhs, find_branches,
                                  find_delta_star, grid_minimum, integrate_profile, shooting_map, slope_of,
                                  solve_expander, write_sweep_csv)

from conftest import DELTA_R0_1, DELTA_STAR, R0_LARGE_15, R0_SMALL_15, R0_STAR


@pytest.mark.parametrize("r0,n", [(0.3, 2), (1.0, 2), (2.5, 3)])
def test_initial_slope(r0, n):
    d = expander_rhs(0.0, [r0, 0.0, math.pi / 2], n)
    assert d[2] == pytest.approx(-r0 / 2 - (n - 1) / r0, rel=1e-15)


def test_delta_r0_1_frozen(exp_r1):
    assert exp_r1.delta_fit == pytest.approx(DELTA_R0_1, abs=1e-9)
    assert exp_r1.residual_sup < 1e-8
    assert exp_r1.fit_error < 1e-4


def test_dual_integrator():
    radau = dataclasses.replace(DEFAULT, method="Radau")
    assert slope_of(1.0, 2, radau) == pytest.approx(slope_of(1.0, 2), abs=1e-6)


def test_step_halving():
    fine = dataclasses.replace(DEFAULT, step=DEFAULT.step / 2)
    assert abs(slope_of(1.0, 2, fine) - slope_of(1.0, 2)) < 1e-8


def test_fit_window_sensitivity(exp_r1):
    vals = [asymptotic_slope(exp_r1.profile, R)[0] for R in (6.0, 7.0, 8.0, 9.0, 10.0)]
    assert max(vals) - min(vals) < 1e-4


def test_exact_cone_slope():
    d, _ = asymptotic_slope(cone_profile(0.7, 2))
    assert d == pytest.approx(0.7, abs=1e-12)


def test_hyperplane_fit_unreliable():
    with pytest.raises(FitUnreliable):
        asymptotic_slope(hyperplane_profile(2, r_max=12.0))


def test_axis_collision(monkeypatch):
    # constant turning rate 2: the curve is a circle of radius 1/2 through (0.3, 0), which meets the axis
    def rhs(s, y, n):
        return np.array([math.cos(y[2]), math.sin(y[2]), 2.0])
    monkeypatch.setattr(sh, "expander_rhs", rhs)
    with pytest.raises(AxisCollision) as ei:
        integrate_profile(0.3, 2, s_max=2.0)
    assert ei.value.profile is not None
    assert ei.value.profile.s[-1] < math.acos(0.4) / 2


def test_invalid_arguments():
    with pytest.raises(ValueError):
        integrate_profile(-1.0)
    with pytest.raises(ValueError):
        integrate_profile(1.0, n=1)


def test_shooting_map_singleton(exp_r1):
    (s,) = shooting_map([1.0], 2)
    assert s.ok and s.delta == exp_r1.delta_fit
    assert s.sensitivity == pytest.approx((slope_of(1.0001) - slope_of(0.9999)) / 2e-4, rel=1e-6)


@pytest.fixture(scope="module")
def sweep57():
    return shooting_map(np.linspace(0.2, 3.0, 57), 2, workers=4)


def test_sweep_interior_minimum(sweep57):
    r0 = [s.r0 for s in sweep57]
    d = [s.delta for s in sweep57]
    assert all(s.ok for s in sweep57)
    vm = grid_minimum(r0, d)
    assert vm is not None and 0.2 < vm[0] < 3.0
    # continuity: jumps bounded by local sensitivity times spacing (with slack for curvature)
    h = r0[1] - r0[0]
    for a, b in zip(sweep57[:-1], sweep57[1:]):
        assert abs(b.delta - a.delta) <= 2 * h * max(abs(a.sensitivity), abs(b.sensitivity)) + 1e-3


def test_sweep_minimum_stable_under_halving():
    coarse = shooting_map(np.linspace(0.6, 1.0, 9), 2, workers=4)
    fine = shooting_map(np.linspace(0.6, 1.0, 17), 2, workers=4)
    a = grid_minimum([s.r0 for s in coarse], [s.delta for s in coarse])
    b = grid_minimum([s.r0 for s in fine], [s.delta for s in fine])
    assert abs(a[0] - b[0]) < 1e-2
    assert abs(a[1] - b[1]) < 1e-3


def test_sweep_csv(tmp_path, sweep57):
    path = tmp_path / "s.csv"
    write_sweep_csv(sweep57[:3], path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["r0", "delta", "fit_error", "residual_sup", "s_max"]
    assert float(rows[1][1]) == sweep57[0].delta


def test_delta_star(dstar):
    assert dstar.converged
    assert dstar.agreement < 1e-4
    assert dstar.delta_star == pytest.approx(DELTA_STAR, abs=1e-8)
    assert dstar.r0_star == pytest.approx(R0_STAR, abs=1e-3)


def test_delta_star_synthetic():
    ds = find_delta_star(delta_fn=lambda r: (r - 1.0) ** 2 + 0.3, bracket=(0.3, 2.0))
    assert ds.delta_star == pytest.approx(0.3, abs=1e-12)
    assert ds.r0_star == pytest.approx(1.0, abs=1e-6)


def test_delta_star_bracket_error():
    with pytest.raises(BracketError):
        find_delta_star(delta_fn=lambda r: r, bracket=(0.3, 2.0))


def test_delta_star_n3():
    ds = find_delta_star(3, (0.3, 4.5))
    assert ds.delta_star > 0 and ds.converged


def test_branches_below_fold(dstar):
    assert find_branches(0.5 * dstar.delta_star, 2) == []


def test_branches_above_fold(branches15, dstar):
    assert len(branches15) == 2
    small, large = branches15
    assert small.r0 < dstar.r0_star < large.r0
    assert small.r0 == pytest.approx(R0_SMALL_15, abs=1e-8)
    assert large.r0 == pytest.approx(R0_LARGE_15, abs=1e-8)
    for e in branches15:
        assert isinstance(e, RotationalExpander)
        assert e.residual_sup < 1e-8
        assert abs(e.delta_fit - 1.5 * dstar.delta_star) < max(e.fit_error, 1e-8)


def test_branch_roundtrip(exp_r1):
    sols = find_branches(exp_r1.delta_fit, 2)
    assert any(abs(e.r0 - 1.0) < 1e-6 for e in sols)


def test_fold_proximity(dstar):
    with pytest.raises(FoldProximity) as ei:
        find_branches(dstar.delta_star + 1e-7, 2, delta_star=dstar.delta_star)
    assert ei.value.suggestions


def test_expander_json_roundtrip(exp_r1):
    e = RotationalExpander.from_json(exp_r1.to_json())
    assert e.r0 == exp_r1.r0 and e.delta_fit == exp_r1.delta_fit


def test_small_neck_resolved():
    e = solve_expander(0.12, 2)
    assert e.residual_sup < 1e-8 and e.profile.step < DEFAULT.step
