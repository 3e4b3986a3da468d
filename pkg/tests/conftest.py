import numpy as np
import pytest

from embscope import validate_embedding_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_matrix():
    values = np.arange(12, dtype=np.float32).reshape(3, 4) / 4
    return validate_embedding_matrix(values, ["a", "b", "c"])


def random_matrix(rng, n, d, id_prefix="r"):
    ids = [f"{id_prefix}{i}" for i in range(n)]
    return validate_embedding_matrix(rng.standard_normal((n, d)), ids)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance result; the summary is printed at session end."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _CRITERIA[number] = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(_CRITERIA[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
