import numpy as np
import pytest


def central_diff(f, params_list, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of each ParamSet."""
    out = []
    for params in params_list:
        grads = []
        for a in params.arrays():
            g = np.zeros_like(a)
            flat, gflat = a.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                params.touch()
                fp = f()
                flat[i] = orig - h
                params.touch()
                fm = f()
                flat[i] = orig
                params.touch()
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
        out.append(np.concatenate([g.ravel() for g in grads]))
    return out


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-8):
    """Elementwise relative check; ``atol`` sits at the finite-difference round-off floor."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    bad = err > rtol * scale + atol
    assert not bad.any(), (f"{bad.sum()} entries off; worst rel err "
                           f"{np.max(err / np.maximum(scale, 1e-300)):.3g}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def off_kink(*nets, seed=0):
    """Shift biases up slightly so no ReLU pre-activation sits exactly at zero.

    Finite differences are meaningless across the kink, and a hidden layer
    whose inputs are all rectified away feeds its successor a bias of 0.
    """
    r = np.random.default_rng(seed)
    for net in nets:
        for b in net.biases:
            b += r.uniform(0.05, 0.2, b.shape)
        net.touch()
    return nets
