import numpy as np
import pytest

from bevx import tensor as T


def numeric_grad(fn, arrays, step=1e-4):
    """Central finite differences of the scalar ``fn(*arrays)`` w.r.t. each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + step
            hi = fn(*arrays)
            arr[i] = old - step
            lo = fn(*arrays)
            arr[i] = old
            g[i] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grad(build, arrays, step=1e-4):
    """Compare taped gradients of ``build(*tensors) -> scalar Tensor`` with
    finite differences. Returns the worst relative error over inputs."""
    leaves = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*leaves)
    loss.backward()
    analytic = [leaf.grad for leaf in leaves]

    def f(*arrs):
        return build(*[T.Tensor(a) for a in arrs]).item()

    numeric = numeric_grad(f, [a.copy() for a in arrays], step)
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
