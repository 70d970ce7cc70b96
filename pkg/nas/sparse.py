"""
Sparse coding primitives: measurement matrices, shrinkage and ISTA.

Each search node keeps a short code `b`; its architecture logits are the
LASSO solution  argmin_a 1/2 ||A a - b||^2 + lam ||a||_1.
"""
import logging
import math

import numpy as np

from dhalab.exceptions import IstaDivergenceError, MeasurementError

logger = logging.getLogger(__name__)


def mutual_coherence(A):
    """Largest |cosine| between two distinct columns of `A`."""
    unit = A / np.linalg.norm(A, axis=0, keepdims=True)
    gram = np.abs(unit.T @ unit)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max()) if gram.size else 0.0


def init_measurement(m, n, seed, max_coherence=0.8, max_attempts=200):
    """
    Draw an m x n Gaussian(0, 1/m) matrix with unit-norm columns.

    Draws are repeated from the same seeded generator until the mutual
    coherence falls below `max_coherence`.
    """
    if m >= n:
        raise MeasurementError(f"measurement matrix must be wide, got m={m} >= n={n}")
    if m < 1:
        raise MeasurementError(f"measurement matrix needs at least one row, got m={m}")
    rng = np.random.default_rng(seed)
    for attempt in range(1, max_attempts + 1):
        A = rng.normal(0.0, 1.0 / math.sqrt(m), size=(m, n))
        A /= np.linalg.norm(A, axis=0, keepdims=True)
        coherence = mutual_coherence(A)
        if coherence < max_coherence:
            if attempt > 1:
                logger.debug("measurement reseeded m=%d n=%d attempts=%d coherence=%.3f", m, n, attempt, coherence)
            return A
    raise MeasurementError(
        f"no {m}x{n} matrix with coherence < {max_coherence} after {max_attempts} draws (seed={seed})")


def compressed_size(n, ratio):
    """Rows of the measurement matrix for a node with `n` slots: ceil(n * ratio), kept below n."""
    return max(1, min(n - 1, math.ceil(n * ratio)))


def soft_threshold(x, t):
    if t < 0:
        raise ValueError(f"shrinkage threshold must be non-negative, got {t}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lipschitz_constant(A, tol=1e-8, max_iters=10000):
    """
    Largest eigenvalue of A^T A by power iteration on the smaller Gram matrix.

    Stops when the eigen-residual ||M v - mu v|| falls below tol * mu; the
    result is inflated by 1e-6 relative so it never undercuts the true value.
    """
    A = np.asarray(A, dtype=np.float64)
    gram = A @ A.T if A.shape[0] <= A.shape[1] else A.T @ A
    v = np.ones(gram.shape[0]) / math.sqrt(gram.shape[0])
    mu = 0.0
    for _ in range(max_iters):
        w = gram @ v
        mu = float(v @ w)
        if mu <= 0.0:
            return 0.0
        if np.linalg.norm(w - mu * v) <= tol * mu:
            break
        v = w / np.linalg.norm(w)
    return mu * (1.0 + 1e-6)


def lasso_objective(A, b, alpha, lam):
    r = A @ alpha - b
    return 0.5 * float(r @ r) + lam * float(np.abs(alpha).sum())


def ista_recover(A, b, lam, max_iters=200, tol=1e-8, alpha0=None, lipschitz=None, callback=None):
    """
    Solve the LASSO problem for `alpha` with iterative shrinkage-thresholding.

    Warm-starts from `alpha0` when given. `callback(iteration, alpha)` is
    invoked after every iterate. Stops once the largest coordinate change
    drops below `tol`.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    L = lipschitz_constant(A) if lipschitz is None else lipschitz
    alpha = np.zeros(A.shape[1]) if alpha0 is None else np.array(alpha0, dtype=np.float64)
    if L == 0.0:
        return alpha
    step = 1.0 / L
    for iteration in range(1, max_iters + 1):
        grad = A.T @ (A @ alpha - b)
        nxt = soft_threshold(alpha - step * grad, lam * step)
        if not np.all(np.isfinite(nxt)):
            raise IstaDivergenceError(iteration)
        delta = float(np.max(np.abs(nxt - alpha))) if alpha.size else 0.0
        alpha = nxt
        if callback is not None:
            callback(iteration, alpha)
        if delta < tol:
            break
    return alpha
