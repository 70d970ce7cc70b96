"""
SGD with weight decay and the one-step hypergradient of its two knobs.

    theta' = theta - lr * (g + wd * theta)

With g' the gradient of a fresh-batch loss at theta' and theta, g held
fixed, the chain rule through that single step gives

    dL/dlr = -g'.(g + wd * theta)        dL/dwd = -lr * g'.theta
"""
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from dhalab.exceptions import NonFiniteGradientError, ShapeError


@dataclass(frozen=True)
class HyperParams:
    lr: float = 0.05
    wd: float = 3e-4
    lr_min: float = 1e-5
    lr_max: float = 1.0
    wd_min: float = 0.0
    wd_max: float = 0.1
    meta_lr: float = 1e-3

    def __post_init__(self):
        bounds = (self.lr_min, self.lr_max, self.wd_min, self.wd_max, self.meta_lr)
        if not all(np.isfinite(bounds)):
            raise ValueError(f"hyper-parameter bounds must be finite, got {bounds}")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError(f"need 0 < lr_min <= lr_max, got [{self.lr_min}, {self.lr_max}]")
        if not 0 <= self.wd_min <= self.wd_max:
            raise ValueError(f"need 0 <= wd_min <= wd_max, got [{self.wd_min}, {self.wd_max}]")
        if self.meta_lr <= 0:
            raise ValueError(f"meta_lr must be positive, got {self.meta_lr}")

    def clamp(self):
        return replace(self,
                       lr=float(np.clip(self.lr, self.lr_min, self.lr_max)),
                       wd=float(np.clip(self.wd, self.wd_min, self.wd_max)))


@dataclass(frozen=True)
class StepCache:
    """What the hypergradient needs from the theta step: its gradient and starting point."""
    grads: Mapping[str, np.ndarray]
    theta: Mapping[str, np.ndarray]


def _as_mapping(value):
    if isinstance(value, Mapping):
        return value
    return {'': np.asarray(value, dtype=np.float64)}


def _unwrap(like, mapping):
    return mapping[''] if not isinstance(like, Mapping) else mapping


def _check_finite(grads, what, iteration):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"{what} for {name or 'theta'}", iteration)


def optimizer_step(theta, grads, hp, iteration=None):
    """
    One SGD step over a parameter mapping (or a single array).

    Parameters without a gradient still decay. Returns (theta', cache).
    """
    params, gmap = _as_mapping(theta), _as_mapping(grads)
    _check_finite(gmap, "gradient", iteration)
    full = {}
    nxt = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        g = gmap.get(name)
        g = np.zeros_like(value) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != value.shape:
            raise ShapeError("optimizer_step", value.shape, g.shape, detail=name)
        full[name] = g
        nxt[name] = value - hp.lr * (g + hp.wd * value)
    return _unwrap(theta, nxt), StepCache(grads=full, theta={k: np.asarray(v) for k, v in params.items()})


def hypergrad(grad_next, cache, hp, iteration=None):
    """(dL/dlr, dL/dwd) from the fresh-batch gradient at theta' and the saved step."""
    gnext = _as_mapping(grad_next)
    _check_finite(gnext, "fresh-batch gradient", iteration)
    d_lr = 0.0
    d_wd = 0.0
    for name, g in cache.grads.items():
        theta = cache.theta[name]
        gp = gnext.get(name)
        gp = np.zeros_like(theta) if gp is None else np.asarray(gp, dtype=np.float64)
        if gp.shape != g.shape:
            raise ShapeError("hypergrad", g.shape, gp.shape, detail=name)
        d_lr -= float(np.vdot(gp, g + hp.wd * theta))
        d_wd -= hp.lr * float(np.vdot(gp, theta))
    return d_lr, d_wd


def update_hparams(hp, hypergrads, iteration=None):
    d_lr, d_wd = hypergrads
    if not (np.isfinite(d_lr) and np.isfinite(d_wd)):
        raise NonFiniteGradientError("hypergradient", iteration)
    return replace(hp, lr=hp.lr - hp.meta_lr * d_lr, wd=hp.wd - hp.meta_lr * d_wd).clamp()
