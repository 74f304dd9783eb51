import numpy as np
import pytest

from hesit import _backend
from hesit.dataset import Dataset
from hesit.datagen import blobs
from hesit.model import ModelSpec, QuadraticModel


def quad_data(xs, ids=None, start=0):
    xs = np.asarray(xs, dtype=float).reshape(len(xs), -1)
    ids = np.arange(start, start + len(xs)) if ids is None else ids
    return Dataset(ids, xs, np.zeros(len(xs), np.int64))


@pytest.fixture
def quad1():
    return QuadraticModel(np.eye(1))


@pytest.fixture
def n8():
    """8-point damped two-class logistic-regression fixture."""
    trn, val, _ = blobs(13, 2, 2, 2.0, 0)
    return ModelSpec(2, 2, (), l2_lambda=0.1), trn.subset(range(8)), val


@pytest.fixture(params=_backend.available())
def backend(request):
    prev = _backend.name
    _backend.use(request.param)
    yield request.param
    _backend.use(prev)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":abc"))):
        terminalreporter.write_line(line)
