import json
import math

import numpy as np
import pytest

from expanderlab.errors import DivergentNorm, PreconditionError, StepTooLarge
from expanderlab.forms import TestFunction as TF
from expanderlab.forms import (Surface, audit_json, boundary_radius, bump, epsilon_threshold,
                               family_direction, form_B, form_D, form_Q, form_Q_aprime, normal_graph,
                               normal_section, perturb, perturbation_check, poincare_check,
                               quadform_stability_check, random_test_function, run_audit, symmetry_residual,
                               tilted_section, variation_check)
from expanderlab.geometry import cylinder_profile
from expanderlab.shooting import solve_expander
from expanderlab.spectral import assemble_jacobi, spectrum

from conftest import R0_MU_QUARTER


@pytest.fixture(scope="module")
def surf(unstable):
    return Surface.of(unstable)


def test_bump_derivatives(surf):
    b = bump(surf, 0.5, 2.0, 1.3)
    h = surf.profile.step
    i = np.nonzero(np.abs(surf.s - 1.0) < h / 2)[0][0]
    assert b.d1[i] == pytest.approx((b.values[i + 1] - b.values[i - 1]) / (2 * h), rel=1e-5)
    assert b.d2[i] == pytest.approx((b.values[i + 1] - 2 * b.values[i] + b.values[i - 1]) / h ** 2, rel=1e-5)
    assert b.values[np.abs(surf.s - 0.5) >= 2.0].max() == 0.0


def test_forms_bilinear_and_symmetric(surf):
    rng = np.random.default_rng(1)
    u, v, w = (random_test_function(surf, rng) for _ in range(3))
    for form in (form_B, form_D, form_Q):
        assert form(u, v, surf) == pytest.approx(form(v, u, surf), rel=1e-12)
        lhs = form(u.scale(2.0) + v.scale(-3.0), w, surf)
        assert lhs == pytest.approx(2 * form(u, w, surf) - 3 * form(v, w, surf), rel=1e-10, abs=1e-12)
    assert form_B(u, TF.zero(surf), surf) == 0.0
    assert form_B(u, u, surf) > 0 and form_D(u, u, surf) > 0


def test_different_modes_are_orthogonal(surf):
    rng = np.random.default_rng(2)
    u = random_test_function(surf, rng, m=1)
    v = random_test_function(surf, rng, m=2)
    assert form_D(u, v, surf) == 0.0 and form_Q(u, v, surf) == 0.0


@pytest.mark.parametrize("m", [0, 1, 2])
def test_integration_by_parts(surf, m):
    rng = np.random.default_rng(10 + m)
    sec = tilted_section(surf)
    for _ in range(5):
        u = random_test_function(surf, rng, m=m)
        v = random_test_function(surf, rng, m=m)
        assert symmetry_residual(u, v, surf) < 1e-6
        assert symmetry_residual(u, v, surf, "vweighted", sec) < 1e-6


def test_vweighted_q_two_ways(surf):
    # (v.n) conjugation versus the a' potential form must agree
    sec = tilted_section(surf)
    rng = np.random.default_rng(3)
    u, v = random_test_function(surf, rng), random_test_function(surf, rng)
    q1 = form_Q(u, v, surf, "vweighted", sec)
    q2 = form_Q_aprime(u, v, surf, sec)
    scale = math.sqrt((form_D(u, u, surf) + form_B(u, u, surf)) * (form_D(v, v, surf) + form_B(v, v, surf)))
    assert abs(q1 - q2) / scale < 1e-6


def test_normal_section_is_plain(surf):
    rng = np.random.default_rng(4)
    u, v = random_test_function(surf, rng), random_test_function(surf, rng)
    sec = normal_section(surf)
    assert np.all(sec.vdotn == 1.0)
    assert form_Q(u, v, surf, "vweighted", sec) == pytest.approx(form_Q(u, v, surf), rel=1e-13)


def test_zero_perturbation_is_identity(surf):
    rng = np.random.default_rng(5)
    u, v, psi = (random_test_function(surf, rng) for _ in range(3))
    pert = perturb(surf, 0.0, psi)
    assert np.all(pert.OmegaF == 1.0)
    assert form_B(u, v, surf, "pullback", pert=pert) == form_B(u, v, surf)
    assert form_Q(u, v, surf, "pullback", pert=pert) == pytest.approx(form_Q(u, v, surf), rel=1e-12)


def test_cylinder_shift_oracle():
    # constant normal shift of a cylinder r = c (normal points to the axis)
    c, eps, n = 2.0, 0.1, 3
    s = Surface.of(cylinder_profile(c, n))
    one = TF(np.ones(s.profile.size), np.zeros(s.profile.size), np.zeros(s.profile.size))
    pert = perturb(s, eps, one)
    assert np.allclose(pert.rf, c - eps, atol=1e-15)
    expected = (n - 1) * math.log((c - eps) / c) + ((c - eps) ** 2 - c ** 2) / 4
    assert np.allclose(pert.logOmega, expected, atol=1e-14)
    assert np.allclose(pert.normA2_f, (n - 1) / (c - eps) ** 2, rtol=1e-10)
    with pytest.raises(StepTooLarge):
        perturb(s, 2.5, one)


def test_normal_graph_cylinders():
    base = Surface.of(cylinder_profile(2.0, z_min=-2.0, z_max=2.0))
    t, _ = normal_graph(base, cylinder_profile(2.3, z_min=-3.0, z_max=3.0))
    assert np.allclose(t, -0.3, atol=1e-12)


def test_normal_graph_self_and_family(stable):
    surf = Surface.of(stable)
    t, _ = normal_graph(surf, stable.full_profile, (-8.0, 8.0))
    assert np.max(np.abs(t)) < 1e-12
    psi, norm = family_direction(stable)
    inside = np.abs(surf.s) <= 10.0
    scaled = np.max(np.abs(psi.values[inside]) / (1 + surf.profile.radius[inside])) + np.max(np.abs(psi.d1[inside]))
    assert scaled == pytest.approx(1.0, rel=1e-12) and norm > 0


def test_variation_orders(unstable):
    surf = Surface.of(unstable)
    u = bump(surf, 0.3, 3.0)
    v = bump(surf, -1.0, 2.0, -0.7)
    rep = variation_check(unstable, u, v)
    assert rep.first_order == pytest.approx(2.0, abs=0.1)
    assert rep.second_rel_error < 1e-4
    with pytest.raises(ValueError):
        variation_check(unstable, bump(surf, 0.0, 2.0, m=1))


def test_poincare_ratios(surf):
    rng = np.random.default_rng(6)
    R = boundary_radius(surf) + 0.5
    for _ in range(5):
        f = random_test_function(surf, rng)
        for beta in (0.25, 0.375):
            r = poincare_check(surf, f, beta, R)
            assert r.passed()
    with pytest.raises(PreconditionError):
        poincare_check(surf, f, 0.2)


def test_poincare_rejects_growing_function(surf):
    p = surf.profile
    g = np.exp(-0.1 * p.x2)
    f = TF(g, -0.2 * p.xdotT * g, np.zeros_like(g))
    with pytest.raises(DivergentNorm):
        poincare_check(surf, f, 0.375)


def test_perturbation_inequalities(stable):
    exp = solve_expander(R0_MU_QUARTER, 2)
    surf = Surface.of(exp)
    pair = spectrum(assemble_jacobi(exp, 0), 1)[0]
    assert pair.mu <= 0.25
    u = TF.from_eigenpair(pair, surf)
    direction, _ = family_direction(exp)
    rng = np.random.default_rng(7)
    panel = [random_test_function(surf, rng) for _ in range(10)]
    rep = perturbation_check(exp, u, pair.mu, direction, 1e-3, 0.1, panel, residual=pair.residual)
    assert rep.passed and all(0 < m <= 1 for m in rep.margins)
    assert json.loads(json.dumps(rep.to_json()))["pass"] is True
    eps1, last = epsilon_threshold(exp, u, pair.mu, direction, 0.1, panel)
    assert last >= 1e-3 and (eps1 is None or eps1 > last)
    # the stable branch ground state lies above 1/4
    sp = spectrum(assemble_jacobi(stable, 0), 1)[0]
    with pytest.raises(PreconditionError):
        perturbation_check(stable, TF.from_eigenpair(sp, Surface.of(stable)), sp.mu, direction, 1e-3, 0.1, panel)


def test_quadform_signs_nearby(unstable):
    near = solve_expander(unstable.r0 * 1.01, 2)
    rep = quadform_stability_check(unstable, near)
    assert rep.stable and rep.negative and rep.max_displacement < 0.1


def test_run_audit_deterministic(unstable):
    a = run_audit("forms", unstable, samples=6, seed=3, workers=1)
    b = run_audit("forms", unstable, samples=6, seed=3, workers=3)
    assert audit_json(a) == audit_json(b)
    assert all(r["pass"] for r in a)
    with pytest.raises(ValueError):
        run_audit("nonsense", unstable, samples=1)
    with pytest.raises(PreconditionError):
        run_audit("perturbation", unstable.full_profile, samples=1)
