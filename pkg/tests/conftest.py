import numpy as np
import pytest

from hdgbiot.forms import ModelParameters
from hdgbiot.mesh import generate_structured_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mesh2():
    return generate_structured_mesh(2)


@pytest.fixture(scope="session")
def mesh4():
    return generate_structured_mesh(4)


@pytest.fixture(scope="session")
def params1():
    return ModelParameters.for_degree(1)


@pytest.fixture(scope="session")
def params_by_degree():
    return {k: ModelParameters.for_degree(k) for k in (1, 2, 3)}


_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record and print the one-line outcome of an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS[number] = line
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
