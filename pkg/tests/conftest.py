import numpy as np
import pytest

from pqsched import ConfusionMatrix, CostFn, SystemConfig

# Two-class reference system used throughout: lam=1, p=(0.3, 0.7),
# mu=(2, 1), quadratic delay costs with coefficients (1, 10), and a
# mildly noisy classifier.
REF_Q = ((0.9, 0.1), (0.2, 0.8))


def make_two_class(horizon: float = 1.0, confusion=REF_Q, **overrides) -> SystemConfig:
    if not isinstance(confusion, ConfusionMatrix):
        confusion = ConfusionMatrix(confusion)
    kwargs = dict(
        lam=1.0,
        prevalences=(0.3, 0.7),
        service_rates=(2.0, 1.0),
        costs=(CostFn(1.0), CostFn(10.0)),
        confusion=confusion,
        horizon=horizon,
    )
    kwargs.update(overrides)
    return SystemConfig(**kwargs)


@pytest.fixture
def two_class_config() -> SystemConfig:
    return make_two_class()


@pytest.fixture
def identity_config() -> SystemConfig:
    return make_two_class(confusion=((1.0, 0.0), (0.0, 1.0)))


@pytest.fixture
def critical_config() -> SystemConfig:
    # rho = 100 * (0.5/150 + 0.5/75) = 1 exactly.
    return make_two_class(
        lam=100.0,
        prevalences=(0.5, 0.5),
        service_rates=(150.0, 75.0),
        costs=(CostFn(1.0), CostFn(4.0)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260814)
