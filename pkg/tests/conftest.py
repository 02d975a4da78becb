import numpy as np
import pytest

from dermfuse import tensor as T
from dermfuse.gradcheck import finite_diff_grad, relative_error, sample_indices
from dermfuse.rng import SeededRng

GRAD_TOL = 1e-4


def grad_errors(f, tensors, probes=24, seed=0, step=1e-5):
    """Relative error between backward() and central differences for each tensor.

    ``f`` takes no arguments and returns a scalar Tensor; it must be
    deterministic (stochastic layers re-seed their masks on every call).
    """
    for t in tensors:
        t.grad = None
    T.backward(f())
    rng = SeededRng(seed)
    errors = []
    for t in tensors:
        idx = sample_indices(t.shape, probes, rng)
        numeric = finite_diff_grad(f, t, step=step, indices=idx, pass_x=False)
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        errors.append(relative_error([analytic[i] for i in idx], [numeric[i] for i in idx]))
    return errors


def weighted_sum(out, seed=1):
    """Scalar loss with random weights so every output element matters."""
    w = SeededRng(seed).normal(0, 1, out.shape)
    return T.reduce("sum", T.mul(out, w))


@pytest.fixture
def rng():
    return SeededRng(1234)


# One line per acceptance criterion, repeated at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
