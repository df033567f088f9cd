import numpy as np
import pytest

from selforder import autodiff as ad


def numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn(x)`` for every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn(x)
        x[idx] = old - h
        down = fn(x)
        x[idx] = old
        out[idx] = (up - down) / (2 * h)
    return out


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|), entrywise."""
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def check_grad(build, x0: np.ndarray, h: float = 1e-6) -> float:
    """Relative error between backward() and central differences.

    ``build(node)`` must return a 1x1 loss node.
    """
    leaf = ad.Node(np.array(x0, dtype=np.float64), requires_grad=True)
    ad.backward(build(leaf))
    numeric = numeric_grad(lambda v: build(ad.Node(v)).value[0, 0], x0, h)
    return rel_err(leaf.grad, numeric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one (criterion, passed, detail) row per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
