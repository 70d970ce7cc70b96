"""In-memory datasets, synthetic generators and deterministic splits."""
from dataclasses import dataclass, field

import numpy as np

from dhalab.exceptions import DatasetError


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class Dataset:
    """
    Samples stacked into `x` (N, ...) and integer labels `y` (N,).

    `kind` is "image" for (N, C, H, W) inputs in [0, 1] and "vector" for
    (N, d) feature rows.
    """
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    kind: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.shape[0] != y.shape[0]:
            raise DatasetError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if self.kind not in ('image', 'vector'):
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if self.kind == 'image' and x.ndim != 4:
            raise DatasetError(f"image datasets are (N, C, H, W), got {x.shape}")
        if self.kind == 'vector' and x.ndim != 2:
            raise DatasetError(f"vector datasets are (N, d), got {x.shape}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes}), got [{y.min()}, {y.max()}]")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'y', y)

    def __len__(self):
        return self.y.shape[0]

    def __getitem__(self, index):
        return Sample(self.x[index], int(self.y[index]))

    @property
    def input_shape(self):
        return self.x.shape[1:]

    def subset(self, indices, **provenance):
        return Dataset(self.x[indices], self.y[indices], self.num_classes, self.kind,
                       {**self.provenance, **provenance})


def synth_moons(n, noise=0.1, seed=0):
    """Two interleaving half circles; class 0 on the upper arc around (0, 0), class 1 on the lower one around (1, 0.5)."""
    if n < 2:
        raise DatasetError(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    n_upper = (n + 1) // 2
    n_lower = n - n_upper
    t_upper = np.linspace(0.0, np.pi, n_upper)
    t_lower = np.linspace(0.0, np.pi, n_lower)
    x = np.concatenate([
        np.stack([np.cos(t_upper), np.sin(t_upper)], axis=1),
        np.stack([1.0 - np.cos(t_lower), 0.5 - np.sin(t_lower)], axis=1),
    ])
    y = np.concatenate([np.zeros(n_upper, dtype=np.int64), np.ones(n_lower, dtype=np.int64)])
    if noise > 0:
        x = x + rng.normal(0.0, noise, size=x.shape)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], 2, 'vector', {'generator': 'moons', 'n': n, 'noise': noise, 'seed': seed})


def synth_blobs(n, k=2, seed=0, std=0.5, radius=4.0):
    """Isotropic Gaussian blobs with centers spaced evenly on a circle; class sizes differ by at most one."""
    if n < 2:
        raise DatasetError(f"need at least 2 samples, got {n}")
    if k < 2:
        raise DatasetError(f"need at least 2 classes, got {k}")
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(k) / k
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = np.arange(n) % k
    x = centers[y] + rng.normal(0.0, std, size=(n, 2))
    order = rng.permutation(n)
    return Dataset(x[order], y[order], k, 'vector', {'generator': 'blobs', 'n': n, 'k': k, 'seed': seed})


def split(dataset, holdout_fraction, seed):
    """(train, holdout) by a seeded permutation; the holdout keeps round(N * fraction) samples."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise DatasetError(f"holdout_fraction must lie in [0, 1), got {holdout_fraction}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = int(round(len(dataset) * holdout_fraction))
    return (dataset.subset(np.sort(order[cut:]), split='train'),
            dataset.subset(np.sort(order[:cut]), split='holdout'))
