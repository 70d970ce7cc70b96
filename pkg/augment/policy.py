"""
Differentiable augmentation policy over ordered pairs of transforms.

Pairs are drawn with the Gumbel-max trick; the policy loss weighs each
sample's (detached) training loss by the probability of its pair, so a
descent step moves mass towards pairs that produce high training loss.
"""
import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from autodiff import Graph, Tensor
from autodiff import functional as F
from dhalab.exceptions import NonFiniteGradientError, PolicyUpdateError, ShapeError

from .transforms import MAX_MAGNITUDE, SIGNED_OPS, TransformOp, apply_pair

logger = logging.getLogger(__name__)

WEIGHTINGS = ('softmax', 'gumbel')


def _softmax(logits):
    z = np.exp(logits - logits.max())
    return z / z.sum()


@dataclass(frozen=True)
class DaPolicy:
    ops: Tuple[str, ...]
    tau: np.ndarray = field(repr=False)
    temperature: float = 1.0

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        if tau.shape != (len(self.ops) ** 2,):
            raise PolicyUpdateError(f"tau needs {len(self.ops) ** 2} logits for {len(self.ops)} ops, got {tau.shape}")
        if not self.temperature > 0:
            raise PolicyUpdateError(f"temperature must be positive, got {self.temperature}")
        tau.flags.writeable = False
        object.__setattr__(self, 'tau', tau)

    @classmethod
    def uniform(cls, ops, temperature=1.0):
        return cls(tuple(ops), np.zeros(len(ops) ** 2), temperature)

    @property
    def num_pairs(self):
        return self.tau.size

    def probabilities(self):
        return _softmax(self.tau)

    def pair(self, index):
        first, second = divmod(int(index), len(self.ops))
        return self.ops[first], self.ops[second]

    def top(self, k=3):
        """[(first/second, probability)] for the k most likely pairs."""
        p = self.probabilities()
        order = np.argsort(-p, kind='stable')[:k]
        return [("/".join(self.pair(i)), float(p[i])) for i in order]

    def to_text(self):
        p = self.probabilities()
        order = np.argsort(-p, kind='stable')
        return "".join(f"{self.pair(i)[0]},{self.pair(i)[1]},{p[i]!r}\n" for i in order)


@dataclass(frozen=True)
class PairDraw:
    """Hard pair index per sample, the Gumbel noise behind it and its weight p_k."""
    indices: np.ndarray
    noise: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(zip(self.indices.tolist(), self.weights.tolist()))


def sample_pairs(policy, n, rng, weighting='softmax'):
    if n < 1:
        raise ValueError(f"need at least one draw, got n={n}")
    noise = rng.gumbel(size=(n, policy.num_pairs))
    indices = np.argmax(policy.tau + noise, axis=1)
    weights = pair_weights(Tensor(policy.tau), indices, noise, policy.temperature, weighting).data
    return PairDraw(indices=indices, noise=noise, weights=np.array(weights))


def pair_weights(tau, indices, noise, temperature=1.0, weighting='softmax'):
    """
    Differentiable p_k for every draw: the softmax probability of the drawn
    pair, or with `weighting="gumbel"` its relaxed Gumbel-Softmax weight.
    """
    if weighting == 'softmax':
        return F.softmax(tau)[np.asarray(indices)]
    if weighting == 'gumbel':
        relaxed = F.softmax((tau + noise) / temperature, axis=-1)
        return relaxed[(np.arange(len(indices)), np.asarray(indices))]
    raise ValueError(f"unknown pair weighting {weighting!r}; expected one of {WEIGHTINGS}")


def da_loss(losses, weights):
    """-sum_k p_k l_k with the per-sample losses treated as constants."""
    losses = np.asarray(getattr(losses, 'data', losses), dtype=np.float64)
    if losses.shape != weights.shape:
        raise ShapeError("da_loss", losses.shape, weights.shape)
    return -F.weighted_sum(weights, losses)


def da_gradient(policy, draw, losses, weighting='softmax'):
    """(policy loss, d loss / d tau) for one batch of draws."""
    tau = Tensor(policy.tau, requires_grad=True, name='tau')
    with Graph() as graph:
        loss = da_loss(losses, pair_weights(tau, draw.indices, draw.noise, policy.temperature, weighting))
        graph.backward(loss)
    return loss.item(), tau.grad


def update_tau(policy, grad, step, iteration=None):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != policy.tau.shape:
        raise PolicyUpdateError(f"tau gradient shape {grad.shape} does not match {policy.tau.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError("tau gradient", iteration)
    tau = policy.tau - step * grad
    if not np.all(np.isfinite(tau)):
        raise NonFiniteGradientError("tau logits", iteration)
    return DaPolicy(policy.ops, tau, policy.temperature)


def sample_transforms(policy, draw, rng):
    """Concrete (first, second) ops per draw with uniform magnitudes and random signs."""
    pairs = []
    for index in draw.indices:
        ops = []
        for kind in policy.pair(index):
            magnitude = float(rng.uniform(0.0, MAX_MAGNITUDE))
            negate = bool(rng.random() < 0.5) if kind in SIGNED_OPS else False
            ops.append(TransformOp(kind, magnitude, negate, int(rng.integers(2**31))))
        pairs.append(tuple(ops))
    return pairs


def augment_batch(x, pairs):
    return np.stack([apply_pair(sample, first, second) for sample, (first, second) in zip(x, pairs)])
