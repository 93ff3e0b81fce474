import pytest

from expanderlab.degree import delta_star_cached
from expanderlab.shooting import find_branches, solve_expander
from expanderlab.torus import integrate_shrinker_torus

# Frozen reference values, measured once at the default settings and
# cross-checked against an independent integrator (Radau) and minimiser.
DELTA_R0_1 = 2.317268822920899        # delta(r0 = 1), n = 2
DELTA_STAR = 2.276024052872573        # fold value, n = 2
R0_STAR = 0.8071492862799593
R0_SMALL_15 = 0.23259060805           # branches at delta = 1.5 delta*
R0_LARGE_15 = 2.1010028323981484
MU_GROUND_UNSTABLE = -9.6025          # lowest m = 0 eigenvalue on the small-neck branch
TORUS_RMINUS = 0.437124
TORUS_RPLUS = 3.314708
TORUS_DELTA0 = 1.42433
R0_MU_QUARTER = 0.9399397292283468    # large-neck side, lowest m = 0 eigenvalue 0.24

ACCEPTANCE = {}


def record(k, ok, detail):
    ACCEPTANCE.setdefault(k, []).append((bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def exp_r1():
    return solve_expander(1.0, 2)


@pytest.fixture(scope="session")
def dstar():
    return delta_star_cached(2)


@pytest.fixture(scope="session")
def branches15(dstar):
    exps = find_branches(1.5 * dstar.delta_star, 2)
    return sorted(exps, key=lambda e: e.r0)


@pytest.fixture(scope="session")
def unstable(branches15):
    return branches15[0]


@pytest.fixture(scope="session")
def stable(branches15):
    return branches15[-1]


@pytest.fixture(scope="session")
def torus():
    return integrate_shrinker_torus(2)
