import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cek import Dataset  # noqa: E402

# (x, z, y) with hand-derived values: tau(0) = tau(1) = 0.5, p(x) = 0.5, e(x) = 0.5
D1_RECORDS = [
    ((0,), 1, 1), ((0,), 1, 0), ((0,), 0, 0), ((0,), 0, 0),
    ((1,), 1, 1), ((1,), 1, 1), ((1,), 0, 1), ((1,), 0, 0),
]
D1_ATE = 0.5
D1_CELL_MEANS = {(1, (0,)): 0.5, (0, (0,)): 0.0, (1, (1,)): 1.0, (0, (1,)): 0.5}


def dataset_from_records(records, names=None, outcome_kind=None):
    X = np.array([list(x) for x, _, _ in records], dtype=np.int64).reshape(len(records), -1)
    z = np.array([r[1] for r in records], dtype=np.int64)
    y = np.array([r[2] for r in records])
    if names is None:
        names = ["x"] if X.shape[1] == 1 else [f"x{j + 1}" for j in range(X.shape[1])]
    return Dataset.from_arrays(X, z, y, names, outcome_kind)


def records_from_dataset(ds):
    X = ds.covariate_matrix()
    return [(tuple(int(v) for v in X[i]), int(ds.treatment[i]), ds.outcome[i].item()) for i in range(ds.n)]


def random_records(rng, real=False, n_range=(8, 512), max_covariates=3, max_card=3):
    """Random dataset in which every observed stratum has both arms.

    Draws are repeated until common support holds, which is how violating
    strata are regenerated away.
    """
    while True:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        p = int(rng.integers(1, max_covariates + 1))
        cards = rng.integers(2, max_card + 1, size=p)
        X = np.column_stack([rng.integers(0, c, size=n) for c in cards])
        keys = [tuple(int(v) for v in row) for row in X]
        prop = {k: rng.uniform(0.2, 0.8) for k in set(keys)}
        base = {k: rng.uniform(0.1, 0.9) for k in set(keys)}
        z = (rng.random(n) < np.array([prop[k] for k in keys])).astype(int)
        y = (rng.random(n) < np.array([base[k] for k in keys]) + 0.1 * z).astype(int)
        arms = {}
        for k, zi in zip(keys, z):
            arms.setdefault(k, set()).add(int(zi))
        if all(len(a) == 2 for a in arms.values()):
            if real:
                return [(k, int(zi), float(yi) + float(u)) for k, zi, yi, u in zip(keys, z, y, rng.random(n))]
            return [(k, int(zi), int(yi)) for k, zi, yi in zip(keys, z, y)]


@pytest.fixture
def d1_records():
    return list(D1_RECORDS)


@pytest.fixture
def d1():
    return dataset_from_records(D1_RECORDS)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
