import numpy as np
import pytest

from co2seq import _kernels_py, kernels

try:
    from co2seq import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_NAMES = ("banded_ldl_factor", "banded_ldl_solve", "basis_funs_ders",
          "stencil_apply", "stencil_adjoint")

BACKENDS = ["python"] + (["compiled"] if _compiled is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per kernel implementation."""
    impl = _kernels_py if request.param == "python" else _compiled
    for name in _NAMES:
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd_banded(rng, n, bw):
    """Dense SPD matrix with the given bandwidth (diagonally dominant)."""
    a = np.zeros((n, n))
    for k in range(1, min(bw, n - 1) + 1):
        d = rng.uniform(-1, 1, n - k)
        a += np.diag(d, k) + np.diag(d, -k)
    a += np.diag(np.abs(a).sum(axis=1) + rng.uniform(0.5, 2.0, n))
    return a


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and again in the session summary."""
    def emit(number, passed, detail):
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
