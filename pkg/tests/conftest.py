import pytest

from spde_heavy.kernels import ExponentPair, KernelSpec
from spde_heavy.noise import LevyMarkSpec
from spde_heavy.solver import ProblemSpec, Sigma

DESK_ALPHA, DESK_P, DESK_Q, DESK_ETA = 1.2, 1.3, 1.1, 2.0


def desk_problem(sigma=None, noise=None, **kw) -> ProblemSpec:
    """d=1 heat problem on [0, 0.5] x [-2, 2] with stable(1.2) marks."""
    args = dict(
        kernel=KernelSpec.heat(1),
        sigma=sigma or Sigma.capped_abs(10.0),
        noise=noise or LevyMarkSpec.symmetric_stable(DESK_ALPHA, 1.0, 0.1),
        exponents=ExponentPair(DESK_P, DESK_Q, DESK_ETA),
        T=0.5,
        R_eval=2.0,
        n_times=11,
        n_sites=121,
    )
    args.update(kw)
    return ProblemSpec(**args)


@pytest.fixture
def desk():
    return desk_problem()


_ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion (echoed at the end of the run)."""
    def record(number, ok, detail=""):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
