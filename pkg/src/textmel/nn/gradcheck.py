"""Central finite-difference verification of analytic gradients.

The caller supplies a closure that runs forward + backward in 64-bit mode,
leaves gradients on the given parameters, and returns the scalar loss.
A second forward-only closure is derived by calling the same function and
discarding gradients, so the check stays independent of the backward path.
"""

from __future__ import annotations

import numpy as np

from .layers import Param


def finite_diff_gradcheck(loss_and_backward, params: list[Param], seed: int = 0,
                          h: float = 1e-4, coords_per_param: int = 8,
                          loss_only=None) -> float:
    """Max relative error between analytic and numeric gradients.

    relative error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
    maximized over a random sample of coordinates of every parameter.

    Coordinates whose error at the base step size looks bad are re-measured
    with progressively smaller steps and the best result kept: a ReLU kink
    within h of the evaluation point produces a spurious O(1) error that
    vanishes once the step no longer straddles the kink, while a genuinely
    wrong backward pass fails at every step size.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    loss_and_backward()
    analytic = [p.grad.copy() for p in params]
    probe = loss_only if loss_only is not None else loss_and_backward

    def numeric_at(flat, i, step):
        orig = flat[i]
        flat[i] = orig + step
        plus = probe()
        flat[i] = orig - step
        minus = probe()
        flat[i] = orig
        return (plus - minus) / (2.0 * step)

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        n = flat.size
        if n <= coords_per_param:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=coords_per_param, replace=False)
        for i in idx:
            a_i = a.reshape(-1)[i]
            err = None
            for step in (h, h / 32.0, h / 1024.0):
                numeric = numeric_at(flat, i, step)
                e = abs(a_i - numeric) / max(abs(a_i), abs(numeric), 1e-8)
                err = e if err is None else min(err, e)
                if err < 1e-4:
                    break
            worst = max(worst, err)
    # restore the true gradients for the unperturbed point
    for p, a in zip(params, analytic):
        p.grad[...] = a
    return worst


def scalar_projection_loss(output: np.ndarray, seed: int = 0) -> tuple[float, np.ndarray]:
    """Deterministic random projection of an output tensor to a scalar.

    Returns (loss, d_loss/d_output); used to scalarize layer outputs for
    gradient checking.
    """
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=output.shape)
    return float((output * proj).sum()), proj
