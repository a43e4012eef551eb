"""Shared numerical oracles for the test suite.

The gradient checks compare reverse-mode gradients against central finite
differences computed from repeated forward passes, so every autodiff test
has an oracle that never looks at the backward code under test.
"""

import numpy as np

from colo import autodiff as ad


def max_rel_err(got, want) -> float:
    """Worst elementwise relative error with an absolute floor of 1e-3."""
    g = np.asarray(got, dtype=np.float64)
    w = np.asarray(want, dtype=np.float64)
    assert g.shape == w.shape, f"shape mismatch {g.shape} vs {w.shape}"
    if g.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(g), np.abs(w)), 1e-3)
    return float(np.max(np.abs(g - w) / denom))


def fd_grad(f, t: ad.Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` wrt ``t``.

    ``f`` must recompute its value from ``t.data`` on every call; the data is
    perturbed in place and restored.
    """
    g = np.zeros(t.data.shape, dtype=np.float64)
    for idx in np.ndindex(t.data.shape):
        old = t.data[idx]
        t.data[idx] = old + eps
        hi = f()
        t.data[idx] = old - eps
        lo = f()
        t.data[idx] = old
        g[idx] = (hi - lo) / (2.0 * eps)
    return g


def gradcheck(build, params, eps: float = 1e-5, tol: float = 1e-4) -> float:
    """Assert tape gradients of the scalar ``build()`` match finite differences.

    ``params`` must be float64 tensors; float32 storage loses too many digits
    for a 1e-4 comparison.
    """
    for p in params:
        assert p.data.dtype == np.float64, "gradcheck needs float64 parameters"
        p.grad = None
    with ad.Tape():
        loss = build()
        ad.backward(loss)
    worst = 0.0
    for p in params:
        assert p.grad is not None, "no gradient reached a parameter"
        num = fd_grad(lambda: build().item(), p, eps=eps)
        worst = max(worst, max_rel_err(p.grad, num))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e}"
    return worst
