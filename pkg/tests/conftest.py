import numpy as np
import pytest

from dressedatom.atom import FormFactorSpec, PotentialSpec, Profile, RadialGrid, solve_atom
from dressedatom.fiber import FiberConfig
from dressedatom.fock import build_basis, make_mode_grid

SOFT = PotentialSpec("soft-coulomb", softening=0.1)
COULOMB = PotentialSpec("coulomb")
HYDROGEN_FIXED = PotentialSpec("coulomb", m_n=float("inf"))


@pytest.fixture(scope="session")
def soft_atom():
    return solve_atom(SOFT, 1, 2, RadialGrid())


@pytest.fixture(scope="session")
def coulomb_atom():
    return solve_atom(COULOMB, 1, 2, RadialGrid())


@pytest.fixture(scope="session")
def ff():
    return FormFactorSpec(Profile(), Profile(amplitude=-1.0), sigma=0.1, g=1e-3)


@pytest.fixture(scope="session")
def cfg_for(soft_atom, ff):
    """FiberConfig factory on the soft-Coulomb atom."""

    def make(nr=4, nd=6, nmax=1, g=1e-3, Pi=(0.0, 0.0, 0.0), atom=None, form=None, k_max=None):
        form = ff if form is None else form
        grid = make_mode_grid(form.k_uv if k_max is None else k_max, nr, nd, sigma=form.sigma)
        return FiberConfig(soft_atom if atom is None else atom, build_basis(grid, nmax), form, Pi=np.asarray(Pi), g=g)

    return make


CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    CRITERIA[mark.args[0]] = (mark.args[1], "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, verdict, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {name:24s} {verdict}  {detail}")
