import numpy as np
import pytest

from runs import TARGET_LENGTHS, cylinder_study, uniform_study

from vemns.mesh import Rectangle, build_initial_mesh
from vemns.problems import manufactured_problem
from vemns.solver import newton_solve

# criterion -> list of (ok, message); printed once per criterion at the end
_ACCEPTANCE = {}


class AcceptanceLog:
    def check(self, criterion, ok, message):
        _ACCEPTANCE.setdefault(criterion, []).append((bool(ok), message))
        return bool(ok)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[crit]
        ok = all(p[0] for p in parts)
        detail = "; ".join(("" if p[0] else "FAILED ") + p[1] for p in parts)
        tr.write_line(f"{'PASS' if ok else 'FAIL'} criterion {crit}: {detail}")


@pytest.fixture(scope="session")
def uniform_runs():
    """Uniform refinement studies for both manufactured cases at Re 1 and 40."""
    return {(case, re): uniform_study(case, re) for case in ("test1", "test2") for re in (1, 40)}


@pytest.fixture(scope="session")
def cylinder_runs():
    """Adaptive cylinder runs over the whole Reynolds ladder."""
    return {re: cylinder_study(float(re)) for re in sorted(TARGET_LENGTHS)}


@pytest.fixture(scope="session")
def small_test1():
    """Test 1 at Re = 1 on a 4 x 4 unit-square mesh."""
    problem = manufactured_problem("test1", 1.0, Rectangle(0, 0, 1, 1, cell=0.25))
    sol = newton_solve(problem, mesh=build_initial_mesh(problem.geometry))
    return problem, sol


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)
