"""Central finite-difference verification of hand-rolled gradients."""

from __future__ import annotations

import numpy as np

from .stumps import StumpEnsemble


def gradient_check(model, example, eps: float = 1e-4) -> float:
    """Max over parameter blocks of ||g_analytic - g_fd||_inf relative to the
    block's gradient magnitude. Every entry of every block is perturbed.

    Models expose _gc_params (live parameter arrays), _gc_loss and _gc_grads;
    the stump ensemble is not differentiable and is rejected.
    """
    if isinstance(model, StumpEnsemble):
        raise TypeError("gradient check unsupported for stump ensembles")
    params = model._gc_params()
    analytic = model._gc_grads(example)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.ravel()
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = model._gc_loss(example)
            flat[i] = orig - eps
            lm = model._gc_loss(example)
            flat[i] = orig
            fd[i] = (lp - lm) / (2 * eps)
        ga = np.asarray(analytic[name], dtype=float).ravel()
        denom = max(np.abs(ga).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-12)
        err = float(np.abs(ga - fd).max(initial=0.0) / denom)
        worst = max(worst, err)
    # restore any boxed scalars mutated through the live views
    if hasattr(model, "_sync_bias"):
        model._sync_bias()
    if hasattr(model, "_sync_b_out"):
        model._sync_b_out()
    return worst
