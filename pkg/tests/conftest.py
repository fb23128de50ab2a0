"""Shared test helpers: finite-difference gradient checking and tiny datasets."""

import numpy as np
import pytest

from porolab.tensor import Tape


def numerical_gradients(build_loss, arrays, eps=1e-5):
    """Central finite differences of a scalar loss w.r.t. each array entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.ravel(), g.ravel()
        for i in range(a.size):
            old = flat[i]
            flat[i] = old + eps
            fp = build_loss()
            flat[i] = old - eps
            fm = build_loss()
            flat[i] = old
            gf[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def gradient_check(build_loss, tensors, tol=1e-4, eps=1e-5):
    """Compare reverse-mode gradients of ``build_loss()`` against central FD.

    ``build_loss`` must construct the loss Tensor from the given input
    tensors each time it is called; returns the worst relative error.
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    numeric = numerical_gradients(lambda: build_loss().item(),
                                  [t.data for t in tensors], eps=eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        worst = max(worst, float(np.max(np.abs(a - n) / (np.abs(n) + 1e-8))))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol}"
    return worst


@pytest.fixture(scope="session")
def tiny_bundle():
    """One simulated 16x16 sample, 24 days: shared by training-level tests."""
    from porolab.dataio import DatasetBundle
    from porolab.grf import GrfSpec, sample_grf, to_permeability
    from porolab.simulator import ReservoirConfig, run_simulation

    cfg = ReservoirConfig(nx=16, nz=16, total_days=24)
    k = to_permeability(sample_grf(GrfSpec(n=16, seed=11), 0), 10.0)
    s = run_simulation(k, cfg)
    return DatasetBundle(
        k=k[None].astype(np.float32),
        p=s.p_series[None].astype(np.float32),
        sw=s.sw_series[None].astype(np.float32),
        manifest={"train_fraction": 1.0, "grid": 16, "days": 24, "seed": 11},
    ), cfg
