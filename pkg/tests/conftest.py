import numpy as np
import pytest

from eivuq.datagen import Dataset
from eivuq.ensemble import EnsembleModel
from eivuq.nncore import Network, NetworkSpec, TrainConfig


def linear_net(weight, bias=(0.0, 0.0)) -> Network:
    """Single-layer network ``z = x @ weight + bias``."""
    weight = np.asarray(weight, dtype=float)
    spec = NetworkSpec(input_dim=weight.shape[0], hidden_layers=())
    return Network(spec, (weight, np.asarray(bias, dtype=float)))


def delta_net(coef, intercept=0.0) -> Network:
    """Linear net whose logit difference is ``x @ coef + intercept`` (z0 = 0)."""
    coef = np.asarray(coef, dtype=float)
    w = np.zeros((coef.size, 2))
    w[:, 1] = coef
    return linear_net(w, (0.0, intercept))


def ensemble_of(*nets) -> EnsembleModel:
    return EnsembleModel(tuple(nets), 0, nets[0].spec, TrainConfig())


def separable_dataset(n=200, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    # push points away from the boundary so a wide margin exists
    x += np.outer(np.where(y == 1, 1.0, -1.0), [0.5, 0.25])
    return Dataset(features=x, labels=y)


@pytest.fixture
def separable():
    return separable_dataset()


# acceptance criteria outcomes, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}")
