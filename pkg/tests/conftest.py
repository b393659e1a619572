import os
from pathlib import Path

import numpy as np
import pytest

from snapens.dataset import RatingDataset

ROOT = Path(__file__).resolve().parents[1]
_CANDIDATES = [
    os.environ.get("SNAPENS_ML100K"),
    ROOT / "data" / "ml-100k" / "u.data",
    Path("/root/data/ml-100k/u.data"),
]


def ml100k_path():
    for p in _CANDIDATES:
        if p and Path(p).exists():
            return Path(p)
    return None


@pytest.fixture(scope="session")
def ml100k():
    path = ml100k_path()
    if path is None:
        pytest.skip("MovieLens-100K not found; run scripts/fetch_ml100k.py")
    return path


def make_dataset(rows, num_users=None, num_items=None, scale=(1.0, 5.0)):
    """rows: (user, item, rating, timestamp) tuples over 0-based ids."""
    a = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    users, items = a[:, 0].astype(int), a[:, 1].astype(int)
    return RatingDataset(
        users, items, a[:, 2], a[:, 3].astype(np.int64),
        num_users if num_users is not None else int(users.max()) + 1,
        num_items if num_items is not None else int(items.max()) + 1,
        scale,
    )


def random_dataset(n_users=30, n_items=40, density=0.3, seed=0):
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    # every user gets at least three ratings so everyone is split
    for u in range(n_users):
        if mask[u].sum() < 3:
            mask[u, rng.choice(n_items, 3, replace=False)] = True
    u, i = np.nonzero(mask)
    r = rng.integers(1, 6, len(u)).astype(float)
    t = rng.integers(0, 1000, len(u))
    return RatingDataset(u, i, r, t, n_users, n_items, (1.0, 5.0))


@pytest.fixture
def toy():
    return random_dataset()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
