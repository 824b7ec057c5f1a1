"""Gradient checking against central finite differences.

The analytic gradient (float32 tape, exactly what training uses) is compared
with directional derivatives of the same function evaluated in float64: the
checked parameter's data is temporarily upcast and the promoted dtype flows
through every op, so the finite-difference oracle is not drowned in float32
forward rounding.
"""

from __future__ import annotations

import numpy as np


def gradient_check(fn, params, h=1e-3, tol=1e-3, n_directions=8, rng=None):
    """Check d fn / d p for each named parameter in ``params``.

    fn: nullary callable returning a scalar Tensor, deterministic, closed
        over the parameters.
    params: list of (name, Tensor) with requires_grad=True.
    Returns a dict name -> max relative error over the probed directions.
    Raises AssertionError when any direction exceeds ``tol``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    params = list(params)

    for _, p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = {}
    for name, p in params:
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

    errors = {}
    for name, p in params:
        saved = p.data
        base = saved.astype(np.float64)
        worst = 0.0
        for _ in range(n_directions):
            v = rng.standard_normal(saved.shape)
            v /= max(np.linalg.norm(v), 1e-12)
            p.data = base + h * v
            f_plus = float(fn().data.reshape(()))
            p.data = base - h * v
            f_minus = float(fn().data.reshape(()))
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(np.sum(analytic[name] * v))
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, rel)
        p.data = saved
        errors[name] = worst
        if worst > tol:
            raise AssertionError(f"gradient check failed for '{name}': rel err {worst:.3e} > {tol:g}")
    return errors
