import numpy as np
import pytest

from ambifair.data_model import Dataset, LevelSet, LinearModel


def make_dataset(n=40, d=2, seed=0, noise=0.3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = np.where(X @ w + noise * rng.normal(size=n) >= 0, 1, -1)
    z = rng.integers(0, 2, size=n)
    return Dataset(X, y, z)


def random_level_set(rng, n_members, d=2):
    members = tuple(LinearModel(rng.normal(size=d), rng.normal()) for _ in range(n_members))
    return LevelSet(members[0], members, 1.0, np.zeros(n_members))


@pytest.fixture
def small_data():
    return make_dataset()


def pytest_terminal_summary(terminalreporter):
    from acceptance_registry import VERDICTS

    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(VERDICTS):
        status, detail = VERDICTS[name]
        terminalreporter.write_line(f"{status} {name}: {detail}")
