import numpy as np
import pytest

FD_STEP = 1e-3
FD_RTOL = 1e-4


def central_difference(f, arrays, step=FD_STEP):
    """Numerical gradient of scalar ``f()`` w.r.t. each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = a[i]
            a[i] = orig + step
            up = f()
            a[i] = orig - step
            down = f()
            a[i] = orig
            g[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    """Max abs deviation relative to the largest gradient magnitude.

    Gradients that vanish identically (e.g. attention key bias) leave only
    rounding noise, so the scale is floored at 1e-8.
    """
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradcheck(fn, *arrays, seed=0):
    """Relative error between autodiff and central differences for ``fn``.

    The scalar under test is ``sum(fn(*tensors) * R)`` with a fixed random
    weighting R so that every output entry contributes.
    """
    from sthd.tensor import Tensor, no_grad

    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    R = np.random.default_rng(seed).uniform(-1, 1, out.shape)
    (out * Tensor(R)).sum().backward()
    analytic = [t.grad for t in tensors]

    def f():
        with no_grad():
            return float(np.sum(fn(*[Tensor(a) for a in arrays]).data * R))

    numeric = central_difference(f, arrays)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
