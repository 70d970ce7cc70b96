"""Epoch-based mini-batch streams with stable batch ids."""
from dataclasses import dataclass

import numpy as np

from dhalab.exceptions import BatchSpecError


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise BatchSpecError(f"batch_size must be at least 1, got {self.batch_size}")


@dataclass(frozen=True)
class Batch:
    id: str
    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.y.shape[0]


class BatchStream:
    """
    Single-consumer stream over one dataset.

    Each epoch draws a fresh permutation from the stream's own generator;
    batches never straddle an epoch boundary. With drop_last off the final
    short batch of an epoch is emitted as is.
    """

    def __init__(self, name, dataset, spec):
        if spec.drop_last and spec.batch_size > len(dataset):
            raise BatchSpecError(
                f"{name}: batch_size {spec.batch_size} exceeds dataset size {len(dataset)} with drop_last"
            )
        if len(dataset) == 0:
            raise BatchSpecError(f"{name}: empty dataset")
        self.name = name
        self.dataset = dataset
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.epoch = -1
        self.position = 0
        self.index = 0
        self.order = np.empty(0, dtype=np.int64)

    def _new_epoch(self):
        self.epoch += 1
        self.order = self.rng.permutation(len(self.dataset))
        self.position = 0
        self.index = 0

    def _epoch_exhausted(self):
        remaining = len(self.order) - self.position
        return remaining == 0 or (self.spec.drop_last and remaining < self.spec.batch_size)

    def next_batch(self):
        if self.epoch < 0 or self._epoch_exhausted():
            self._new_epoch()
        indices = self.order[self.position:self.position + self.spec.batch_size]
        batch = Batch(f"{self.name}-{self.epoch}-{self.index}", indices,
                      self.dataset.x[indices], self.dataset.y[indices])
        self.position += len(indices)
        self.index += 1
        return batch

    def __iter__(self):
        while True:
            yield self.next_batch()

    def state_dict(self):
        return {
            'epoch': self.epoch,
            'position': self.position,
            'index': self.index,
            'order': self.order.copy(),
            'rng': self.rng.bit_generator.state,
        }

    def load_state_dict(self, state):
        self.epoch = int(state['epoch'])
        self.position = int(state['position'])
        self.index = int(state['index'])
        self.order = np.asarray(state['order'], dtype=np.int64)
        self.rng.bit_generator.state = state['rng']


def next_batch(stream):
    """Functional alias for BatchStream.next_batch."""
    return stream.next_batch()
