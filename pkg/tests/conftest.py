import numpy as np
import pytest

from synthval.dataset import ObservationalDataset


def make_dataset(n=200, p=3, seed=0, effect=1.0, confounded=True):
    """Linear outcome, logistic assignment on x0 when confounded."""
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((n, p))
    logit = 0.8 * X[:, 0] if confounded else np.zeros(n)
    w = (gen.random(n) < 1 / (1 + np.exp(-logit))).astype(int)
    w[:2] = (0, 1)
    y = X @ np.linspace(1.0, 0.2, p) + effect * w + gen.standard_normal(n)
    return ObservationalDataset(X, w, y)


@pytest.fixture
def small_data():
    return make_dataset()


@pytest.fixture
def four_row_csv(tmp_path):
    path = tmp_path / "four.csv"
    path.write_text("x1,w,y\n0.5,0,1.0\n-0.5,0,2.0\n1.5,1,4.0\n2.5,1,3.0\n")
    return path
