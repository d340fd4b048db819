import numpy as np
import pytest

from vifa.data import Dataset, one_hot_rows
from vifa.encoder import init_encoder
from vifa.grm import ItemBank, init_item_bank


def random_bank(rng, J=4, P=2, C=3):
    counts = np.full(J, C) if np.isscalar(C) else np.asarray(C)
    bank = init_item_bank(J, P, counts, int(rng.integers(1 << 30)))
    bank.loadings = rng.normal(size=(J, P))
    raw = rng.normal(size=bank.raw_intercepts.shape)
    return ItemBank(bank.loadings, raw, counts)


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def small_problem(rng):
    """J=4, P=2, C=3, batch of 3 with a non-trivial encoder."""
    J, P, C, B = 4, 2, 3, 3
    bank = random_bank(rng, J, P, C)
    enc = init_encoder(J * C, 5, P, 7)
    enc.W1 *= 4.0
    enc.W2 *= 3.0
    y = rng.integers(0, C, (B, J))
    rows = one_hot_rows(y, bank.category_counts)
    return bank, enc, y, rows


@pytest.fixture
def tiny_dataset():
    y = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0], [0, 0, 2]])
    return Dataset(y, np.array([3, 2, 3]))


# criterion number -> verdict line, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
