import pytest

from lanedet import tensor as T


@pytest.fixture(autouse=True)
def _clean_tape():
    T.tape.clear()
    yield
    T.tape.clear()


@pytest.fixture()
def finite_checks():
    T.set_finite_checks(True)
    yield
    T.set_finite_checks(False)
