"""
Two-dimensional loss surfaces around a trained point.

Directions are Gaussian draws rescaled filter by filter to the norms of
the matching filters of theta: output channels of conv kernels, output
units of dense (in, out) matrices. One-dimensional parameters (scales,
shifts, biases) get a zero direction.
"""
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from autodiff import no_grad
from autodiff import functional as F

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LandscapeGrid:
    resolution: int
    span: float
    coords: np.ndarray
    values: np.ndarray
    seed_a: int
    seed_b: int
    direction_a: Mapping[str, np.ndarray]
    direction_b: Mapping[str, np.ndarray]

    @property
    def center(self):
        mid = self.resolution // 2
        return float(self.values[mid, mid])

    @property
    def missing(self):
        return int(np.count_nonzero(~np.isfinite(self.values)))

    def rows(self):
        """(a, b, loss) per grid point, a-major."""
        for i, a in enumerate(self.coords):
            for j, b in enumerate(self.coords):
                yield float(a), float(b), float(self.values[i, j])


def _filters(array):
    """View of `array` with one row per filter."""
    if array.ndim == 4:
        return array.reshape(array.shape[0], -1)
    return array.T


def filter_normalized_direction(theta, seed):
    rng = np.random.default_rng(seed)
    direction = {}
    for name in sorted(theta):
        weights = np.asarray(theta[name], dtype=np.float64)
        draw = rng.normal(size=weights.shape)
        if weights.ndim < 2:
            direction[name] = np.zeros_like(weights)
            continue
        d_rows = _filters(draw)
        norms = np.linalg.norm(_filters(weights), axis=1)
        d_norms = np.linalg.norm(d_rows, axis=1)
        scale = np.divide(norms, d_norms, out=np.zeros_like(norms), where=d_norms > 0)
        scaled = d_rows * scale[:, None]
        direction[name] = scaled.reshape(weights.shape) if weights.ndim == 4 else scaled.T.copy()
    return direction


def grid_coordinates(resolution, span):
    """Evenly spaced in [-span, span]; the middle point of an odd grid is exactly 0."""
    if resolution == 1:
        return np.zeros(1)
    half = (resolution - 1) / 2
    return span * (np.arange(resolution) - half) / half


def landscape(loss_fn, theta, resolution=51, span=1.0, seed_a=1, seed_b=2):
    """
    L(theta + a * delta + b * eta) over the (a, b) grid. `loss_fn` maps a
    parameter mapping to a float. Non-finite losses are stored as NaN.
    theta is never written to.
    """
    delta = filter_normalized_direction(theta, seed_a)
    eta = filter_normalized_direction(theta, seed_b)
    coords = grid_coordinates(resolution, span)
    values = np.empty((resolution, resolution))
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            point = {name: theta[name] + (a * delta[name] + b * eta[name]) for name in theta}
            loss = loss_fn(point)
            values[i, j] = loss if np.isfinite(loss) else np.nan
    grid = LandscapeGrid(resolution, span, coords, values, seed_a, seed_b, delta, eta)
    if grid.missing:
        logger.warning("landscape missing=%d of %d grid points", grid.missing, resolution * resolution)
    return grid


def trainer_loss_fn(trainer, batch_size=256):
    """Mean cross-entropy of `trainer`'s model on a fixed evaluation batch."""
    source = trainer.holdout_set if len(trainer.holdout_set) else trainer.train_set
    size = min(batch_size, len(source))
    x, y = source.x[:size], source.y[:size]
    weights = trainer.node_weights(trainer.state)

    def loss_fn(theta):
        with no_grad():
            logits = trainer.supernet.forward(theta, x, weights)
            return F.cross_entropy(logits, y).item()

    return loss_fn


def trainer_landscape(trainer, config=None):
    config = config or trainer.config
    return landscape(trainer_loss_fn(trainer, config.landscape_batch_size), trainer.state.theta,
                     resolution=config.landscape_resolution, span=config.landscape_range,
                     seed_a=config.landscape_seed_a, seed_b=config.landscape_seed_b)
