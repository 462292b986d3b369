import numpy as np
import pytest

from mtdlab.grid import load_case
from mtdlab.powerflow import solve_powerflow


def toy_doc(edges, r=0.01, x=0.1, ref=1, pd=None, name="toy"):
    """Case document on buses 1..N for a list of (from, to) pairs."""
    n = max(max(e) for e in edges)
    pd = [0.0] * n if pd is None else pd
    return {
        "name": name,
        "ref_bus": ref,
        "buses": [{"id": i + 1, "pd": pd[i], "qd": 0.0} for i in range(n)],
        "branches": [{"from": f, "to": t, "r": r, "x": x} for f, t in edges],
    }


def toy_case(edges, **kw):
    return load_case(toy_doc(edges, **kw))


TRIANGLE = [(1, 2), (2, 3), (3, 1)]
# small mesh with a pendant bus (6) and two independent loops
MESH = [(1, 2), (2, 3), (3, 4), (4, 1), (2, 4), (4, 5), (5, 3), (5, 6)]


@pytest.fixture(scope="session")
def case6():
    return load_case("case6ww")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case57():
    return load_case("case57")


@pytest.fixture(scope="session")
def state6(case6):
    return solve_powerflow(case6)


@pytest.fixture(scope="session")
def state14(case14):
    return solve_powerflow(case14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict = {}


@pytest.fixture
def accept():
    """Record the one-line verdict of an acceptance criterion."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
