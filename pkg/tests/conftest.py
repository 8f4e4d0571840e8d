import numpy as np
import pytest
from hypothesis import settings

from m2oe import tensor as T
from m2oe.gradcheck import grad_check
from m2oe.tensor import Tensor

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def op_grad_error(fn, arrays, eps=1e-5, seed=0):
    """Max relative gradient error of ``sum(w * fn(*inputs))`` over all inputs."""
    params = {f"x{i}": Tensor(np.array(a, dtype=float), requires_grad=True)
              for i, a in enumerate(arrays)}
    probe = fn(*params.values())
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def loss():
        return T.sum(fn(*params.values()) * weights)

    return max(grad_check(loss, params, eps).values())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
