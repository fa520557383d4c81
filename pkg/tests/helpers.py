"""Shared test oracles.

The finite-difference gradient here is the independent check for the whole
autodiff stack: it only ever calls forward passes, so it cannot inherit a
bug from the backward code it is judging.
"""

import numpy as np

from molex import tensor as T


def finite_difference_grad(f, params, h=1e-5):
    """Central-difference gradients of the scalar f() w.r.t. each param.

    ``f`` rebuilds its graph on every call from the same parameter tensors;
    entries are perturbed in place and restored.
    """
    grads = []
    with T.no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            gf = g.reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                plus = float(f().data)
                flat[i] = saved - h
                minus = float(f().data)
                flat[i] = saved
                gf[i] = (plus - minus) / (2.0 * h)
            grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7, label=""):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
    rel = np.abs(analytic - numeric) / denom
    worst = float(rel.max()) if rel.size else 0.0
    assert worst < rtol, (
        f"gradient mismatch{' for ' + label if label else ''}: "
        f"worst relative error {worst:.3e} (analytic {analytic.reshape(-1)[np.argmax(rel)]:.6e} "
        f"vs numeric {numeric.reshape(-1)[np.argmax(rel)]:.6e})")


def naive_dft(x):
    """O(n^2) reference DFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    kernel = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ kernel.T


def naive_dft2(x):
    return np.swapaxes(naive_dft(np.swapaxes(naive_dft(x), -1, -2)), -1, -2)
