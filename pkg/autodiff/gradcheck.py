"""Central finite-difference oracle for recorded gradients."""
import numpy as np

from .tensor import Graph, no_grad


def finite_diff_check(f, params, step=1e-4, floor=1e-12, min_magnitude=0.0):
    """
    Compare the backward-pass gradient of `f()` against central differences.

    `f` takes no arguments and returns a scalar Tensor built from `params`.
    Returns max |analytic - numeric| / (|numeric| + floor) over every
    coordinate of every parameter. Coordinates where both gradients are
    below `min_magnitude` in absolute value are left out.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Graph() as graph:
        graph.backward(f())
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        base = p.data
        try:
            for idx in np.ndindex(*base.shape):
                shifted = base.copy()
                shifted[idx] = base[idx] + step
                p.assign(shifted)
                with no_grad():
                    upper = f().item()
                shifted[idx] = base[idx] - step
                p.assign(shifted)
                with no_grad():
                    lower = f().item()
                numeric = (upper - lower) / (2.0 * step)
                if abs(grad[idx]) < min_magnitude and abs(numeric) < min_magnitude:
                    continue
                worst = max(worst, abs(grad[idx] - numeric) / (abs(numeric) + floor))
        finally:
            p.data = base
    for p in params:
        p.zero_grad()
    return worst
