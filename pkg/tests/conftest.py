import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phenoglrm.dataset import ColumnKind, ColumnMeta, Dataset, finalize

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


def mixed_dataset(m, n_num, n_bin, seed=0, finalize_it=True):
    """Random finalized table with ``n_num`` numeric then ``n_bin`` binary columns."""
    rng = np.random.default_rng(seed)
    num = rng.normal(size=(m, n_num)) * rng.uniform(0.5, 3.0, n_num) + rng.uniform(-5, 5, n_num)
    binary = (rng.random((m, n_bin)) < rng.uniform(0.2, 0.8, n_bin)).astype(float)
    # guarantee both levels so no binary column is constant
    if m >= 2 and n_bin:
        binary[0], binary[1] = 0.0, 1.0
    values = np.hstack([num, binary])
    cols = [ColumnMeta(f"n{j}", ColumnKind.NUMERIC, f"n{j}") for j in range(n_num)]
    cols += [ColumnMeta(f"b{j}", ColumnKind.BINARY, f"b{j}") for j in range(n_bin)]
    ds = Dataset([f"r{i}" for i in range(m)], cols, values, np.zeros(values.shape, dtype=bool))
    return finalize(ds) if finalize_it else ds


@pytest.fixture
def small_mixed():
    return mixed_dataset(30, 4, 3, seed=1)
