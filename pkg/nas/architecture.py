"""
Compressed architecture state: one code b per search node, its measurement
matrix A and the sparse logits alpha recovered from it.
"""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from autodiff import Tensor
from autodiff import functional as F
from dhalab.exceptions import ShapeError

from .space import CellSpace
from .sparse import compressed_size, init_measurement, ista_recover, lipschitz_constant

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeCode:
    A: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    E: np.ndarray
    L: float

    @classmethod
    def from_matrix(cls, A, b, alpha=None, lam=1e-4, max_iters=200, tol=1e-8):
        A = np.asarray(A, dtype=np.float64)
        L = lipschitz_constant(A)
        b = np.asarray(b, dtype=np.float64)
        if alpha is None:
            alpha = ista_recover(A, b, lam, max_iters=max_iters, tol=tol, lipschitz=L)
        return cls(A=A, b=b, alpha=np.asarray(alpha, dtype=np.float64),
                   E=A.T @ A - np.eye(A.shape[1]), L=L)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class ArchState:
    space: CellSpace
    codes: Tuple[NodeCode, ...]
    lam: float = 1e-4
    max_iters: int = 200
    tol: float = 1e-8

    @classmethod
    def initialize(cls, space, rng, m_ratio=0.5, b_init_std=0.3, lam=1e-4, max_iters=200, tol=1e-8):
        codes = []
        for node in space.nodes:
            n = space.num_slots(node)
            m = compressed_size(n, m_ratio)
            A = init_measurement(m, n, seed=int(rng.integers(2**63)))
            b = rng.normal(0.0, b_init_std, size=m)
            codes.append(NodeCode.from_matrix(A, b, lam=lam, max_iters=max_iters, tol=tol))
        return cls(space=space, codes=tuple(codes), lam=lam, max_iters=max_iters, tol=tol)

    @property
    def alphas(self):
        return [code.alpha for code in self.codes]

    def b_tensors(self):
        return [Tensor(code.b, requires_grad=True, name=f"b{node}")
                for node, code in zip(self.space.nodes, self.codes)]

    def relaxed_weights(self, b_tensors=None):
        """Per-node slot weights b^T A - alpha^T E, differentiable in b when given tensors."""
        if b_tensors is None:
            b_tensors = [Tensor(code.b) for code in self.codes]
        return [relaxed_node_weights(b, code.alpha, code.A, code.E) for b, code in zip(b_tensors, self.codes)]


def relaxed_node_weights(b, alpha, A, E):
    # alpha enters as a constant: gradients reach b through b^T A only
    constant = np.asarray(alpha, dtype=np.float64) @ np.asarray(E, dtype=np.float64)
    return F.sub(F.matmul(b, A), constant)


def relaxed_node_output(b, alpha, A, E, outputs):
    """Node output (b^T A - alpha^T E) . o over the stacked candidate outputs."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (len(outputs),):
        raise ShapeError("relaxed_node_output", alpha.shape, (len(outputs),),
                         detail="one candidate output per alpha slot")
    return F.mix(relaxed_node_weights(b, alpha, A, E), outputs)


def update_b(arch, grads, lr):
    """Gradient step on every code, then warm-started ISTA for the new alpha."""
    if len(grads) != len(arch.codes):
        raise ShapeError("update_b", (len(arch.codes),), (len(grads),), detail="one gradient per node")
    codes = []
    for code, grad in zip(arch.codes, grads):
        grad = np.zeros_like(code.b) if grad is None else np.asarray(grad, dtype=np.float64)
        if grad.shape != code.b.shape:
            raise ShapeError("update_b", code.b.shape, grad.shape)
        b = code.b - lr * grad
        alpha = ista_recover(code.A, b, arch.lam, max_iters=arch.max_iters, tol=arch.tol,
                             alpha0=code.alpha, lipschitz=code.L)
        codes.append(replace(code, b=b, alpha=alpha))
    return replace(arch, codes=tuple(codes))


def alpha_entropy(alphas):
    """Mean Shannon entropy (nats) of |alpha| normalized per node; all-zero nodes count as 0."""
    values = []
    for alpha in alphas:
        mass = np.abs(alpha)
        total = mass.sum()
        if total == 0.0:
            values.append(0.0)
            continue
        p = mass[mass > 0] / total
        values.append(float(-(p * np.log(p)).sum()))
    return float(np.mean(values)) if values else 0.0
