import numpy as np
import pytest

from vidtok import autodiff as ad
from vidtok.model import ModelConfig

ACCEPTANCE_LINES = []


def micro_config(**kw):
    """Smallest config that still exercises every module type."""
    base = dict(causal=True, r_t=2, r_s=2, latent_channels=3, base_channels=3,
                channel_multipliers=(1,), blocks_per_stage=1)
    base.update(kw)
    return ModelConfig(**base)


def grad_error(fn, target, eps=1e-4, indices=None):
    """Relative error between the tape gradient and central differences for ``target``."""
    for_grad = fn()
    target.zero_grad()
    for_grad.backward()
    analytic = target.grad.copy()
    numeric = ad.numeric_grad(fn, target, eps=eps, indices=indices)
    if indices is not None:
        idx = np.asarray(list(indices))
        return ad.relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx])
    return ad.relative_error(analytic, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with ad.precision(np.float64):
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
