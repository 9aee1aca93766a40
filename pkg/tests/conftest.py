import numpy as np
import pytest

from plls.tensor import Tensor


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2.0 * eps)
        it.iternext()
    return g


def check_grads(build, arrays, rtol=1e-4, atol=1e-6, eps=1e-5):
    """Compare autodiff grads of ``build(*tensors)`` against finite differences.

    ``build`` maps Tensors to a scalar Tensor; ``arrays`` are the leaf values.
    """
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    out.backward()
    for i, leaf in enumerate(leaves):
        def f(x):
            probe = [Tensor(a) for a in arrays]
            probe[i] = Tensor(x)
            return build(*probe).item()

        num = numeric_grad(f, arrays[i], eps)
        got = leaf.grad if leaf.grad is not None else np.zeros_like(num)
        np.testing.assert_allclose(got, num, rtol=rtol, atol=atol,
                                   err_msg=f"gradient mismatch for input {i}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
