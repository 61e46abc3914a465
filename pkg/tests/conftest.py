import numpy as np
import pytest

from tivac.dataset import LongitudinalDataset, SubjectRecord


def make_dataset(n=6, p=1, max_m=4, seed=0, t_max=10.0):
    """Small random dataset; the first covariate column is an intercept."""
    rng = np.random.default_rng(seed)
    subjects = []
    for i in range(n):
        m = int(rng.integers(1, max_m + 1))
        times = np.sort(rng.choice(np.linspace(0.0, t_max, 41), size=m, replace=False))
        subjects.append(SubjectRecord(f"id{i}", times, rng.normal(size=(m, 2))))
    # make sure both range ends are used so time_range is stable
    X = np.column_stack([np.ones(n)] + [rng.uniform(-1, 1, n) for _ in range(p - 1)])
    return LongitudinalDataset(tuple(subjects), X, tuple(f"x{k}" for k in range(p)))


@pytest.fixture
def small_data():
    return make_dataset(n=8, p=2, max_m=5, seed=3)
