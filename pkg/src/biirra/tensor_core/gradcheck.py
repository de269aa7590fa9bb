"""Central finite-difference validation of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import backward


class NondeterministicFunction(RuntimeError):
    pass


def finite_difference_check(f, params, step=1e-5, n_samples=None, seed=0, return_details=False):
    """Compare ``backward`` gradients of ``f()`` against central differences.

    ``f`` takes no arguments and returns a scalar Tensor built from ``params``.
    Up to ``n_samples`` coordinates per parameter are probed (all when None).
    Returns the max over probed coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    again = f()
    if loss.data.tobytes() != again.data.tobytes():
        raise NondeterministicFunction("f returned different values for identical inputs")
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    details = []
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        size = flat.size
        if n_samples is None or n_samples >= size:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, n_samples, replace=False))
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = float(f().data)
            flat[c] = orig - step
            down = float(f().data)
            flat[c] = orig
            num = (up - down) / (2.0 * step)
            an = float(ga.reshape(-1)[c])
            err = abs(an - num) / max(abs(an), abs(num), 1e-8)
            worst = max(worst, err)
            if return_details:
                details.append((getattr(p, "name", "?"), int(c), an, num, err))
    for p in params:
        p.grad = None
    if return_details:
        return worst, details
    return worst
