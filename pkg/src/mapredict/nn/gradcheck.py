"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np


def gradient_check(loss_and_grads, arrays, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grads()`` must return ``(loss, grads)`` where ``grads[k]``
    is the analytic gradient for ``arrays[k]``. The arrays are perturbed in
    place (and restored), so the closure must read them live.
    """
    _, analytic = loss_and_grads()
    analytic = [np.array(g, dtype=float, copy=True) for g in analytic]
    worst = 0.0
    for arr, ana in zip(arrays, analytic):
        if arr.shape != ana.shape:
            raise ValueError(f"gradient shape {ana.shape} does not match array shape {arr.shape}")
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError("gradient_check needs contiguous arrays it can perturb in place")
        ana = ana.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_and_grads()[0]
            flat[j] = orig - step
            down = loss_and_grads()[0]
            flat[j] = orig
            num = (up - down) / (2 * step)
            err = abs(ana[j] - num) / max(abs(ana[j]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
