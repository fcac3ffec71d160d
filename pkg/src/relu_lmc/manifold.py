"""Zero-loss solutions of the over-realized problem.

A student ``W`` (m >= M) has zero loss exactly when every row is either zero
or a positive multiple of some teacher direction e_j, j <= M, and for every
teacher direction the positive entries in column j sum to one. A row lying on
e_j has *type* j; zero rows have type 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import ProblemConfig

MEMBERSHIP_TOL = 1e-8
CLASSIFY_TOL = 1e-4


class UnsupportedRegimeError(ValueError):
    """The requested operation needs m >= M."""


class ClassificationError(ValueError):
    """A row does not lie on a single positive teacher direction."""

    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


@dataclass(frozen=True)
class ClassifiedSolution:
    labels: np.ndarray
    """Per-row type in 0..M, 0 meaning a zero row."""
    alpha: np.ndarray
    """Type vector: neurons per type minus one (may be -1 for a missing type)."""
    residual: float
    values: np.ndarray
    """The on-type entry of each row (0 for zero rows)."""

    @property
    def counts(self) -> np.ndarray:
        return self.alpha + 1

    @property
    def on_manifold_types(self) -> bool:
        return bool(np.all(self.alpha >= 0))


def _require_over_realized(config: ProblemConfig):
    if config.m < config.M:
        raise UnsupportedRegimeError(
            f"global-minima manifold is only characterized for m >= M (m={config.m}, M={config.M})"
        )


def type_vector(labels, M: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=M + 1)[1:]
    return counts - 1


def is_global_min(W, config: ProblemConfig, tol: float = MEMBERSHIP_TOL) -> bool:
    _require_over_realized(config)
    if tol <= 0:
        raise ValueError("tol must be positive")
    W = config.check_shape(W)
    big = np.abs(W) > tol
    if np.any(big[:, config.M:]):
        return False
    if np.any(big.sum(axis=1) > 1):
        return False
    head = W[:, : config.M]
    if np.any(head[big[:, : config.M]] < 0):
        return False
    if np.any(np.abs(head.sum(axis=0) - 1.0) > tol):
        return False
    return bool(np.all(big[:, : config.M].any(axis=0)))


def classify(W, config: ProblemConfig, tol: float = CLASSIFY_TOL) -> ClassifiedSolution:
    """Assign each row its teacher type.

    Raises :class:`ClassificationError` for a row with two or more entries
    above ``tol`` in magnitude, a negative dominant entry, or a dominant entry
    outside the first M columns.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    W = config.check_shape(W)
    if W.ndim != 2:
        raise ValueError("classify takes a single weight matrix")
    mags = np.abs(W)
    labels = np.zeros(config.m, dtype=int)
    values = np.zeros(config.m)
    for i, row in enumerate(W):
        above = np.flatnonzero(mags[i] > tol)
        if above.size == 0:
            continue
        if above.size > 1:
            raise ClassificationError(i, f"{above.size} entries exceed tol={tol:g}")
        k = int(above[0])
        if row[k] < 0:
            raise ClassificationError(i, f"negative dominant entry {row[k]:.3g}")
        if k >= config.M:
            raise ClassificationError(i, f"dominant entry in non-teacher column {k + 1}")
        labels[i] = k + 1
        values[i] = row[k]
    if config.d > 1:
        residual = float(np.sort(mags, axis=1)[:, -2].max())
    else:
        residual = 0.0
    return ClassifiedSolution(labels, type_vector(labels, config.M), residual, values)


def classify_dominant(W, config: ProblemConfig, zero_tol: float = 1e-6) -> ClassifiedSolution:
    """Label each row by its largest positive teacher coordinate.

    Meant for trained weights that are near, but not on, the manifold: pairs
    of same-type neurons keep small opposite off-type components long after
    the loss is negligible, which the strict :func:`classify` rejects. Rows
    with norm <= ``zero_tol`` or no positive teacher coordinate get label 0.
    ``residual`` is the largest off-type fraction ``|w - w_j e_j| / |w|``.
    Works for any m, including m < M.
    """
    W = config.check_shape(W)
    if W.ndim != 2:
        raise ValueError("classify_dominant takes a single weight matrix")
    norms = np.linalg.norm(W, axis=1)
    head = W[:, : config.M]
    k = np.argmax(head, axis=1)
    top = head[np.arange(config.m), k]
    live = (norms > zero_tol) & (top > 0)
    labels = np.where(live, k + 1, 0)
    values = np.where(live, top, 0.0)
    off = np.sqrt(np.maximum(norms**2 - values**2, 0.0))
    residual = float(np.max(off[live] / norms[live])) if live.any() else 0.0
    return ClassifiedSolution(labels, type_vector(labels, config.M), residual, values)


def snap_to_types(W, cls: ClassifiedSolution, config: ProblemConfig) -> np.ndarray:
    """Move each labelled row onto its teacher axis, keeping its norm.

    Zero rows (label 0) become exactly zero. The result has the structure
    :func:`is_global_min` checks, so a trained solution can be tested for
    membership once its slowly decaying off-type components are discarded.
    """
    W = config.check_shape(W)
    out = np.zeros_like(W, dtype=float)
    rows = np.flatnonzero(cls.labels > 0)
    out[rows, cls.labels[rows] - 1] = np.linalg.norm(W[rows], axis=1)
    return out


def sample_type_vector(rng: np.random.Generator, m: int, M: int, size=None) -> np.ndarray:
    """alpha ~ Multinomial(m - M; 1/M, ..., 1/M) by sequential binomial draws.

    With ``size`` the draws are vectorized and the result has shape (size, M).
    """
    shape = () if size is None else (size,)
    remaining = np.full(shape, m - M, dtype=np.int64)
    alpha = np.zeros(shape + (M,), dtype=np.int64)
    for j in range(M - 1):
        alpha[..., j] = rng.binomial(remaining, 1.0 / (M - j))
        remaining = remaining - alpha[..., j]
    alpha[..., M - 1] = remaining
    return alpha


def sample_uniform(config: ProblemConfig, seed) -> np.ndarray:
    """Draw a point of the global-minima manifold under the uniform model.

    Type occupancy is multinomial, within each type the values are uniform on
    the simplex (normalized Exp(1) draws), and the neuron slots are shuffled.
    """
    _require_over_realized(config)
    rng = np.random.default_rng(seed)
    m, M = config.m, config.M
    alpha = sample_type_vector(rng, m, M)
    labels = np.repeat(np.arange(M), alpha + 1)
    values = np.empty(m)
    start = 0
    for j in range(M):
        z = rng.exponential(1.0, alpha[j] + 1)
        values[start : start + alpha[j] + 1] = z / z.sum()
        start += alpha[j] + 1
    order = rng.permutation(m)
    W = np.zeros((m, config.d))
    W[order, labels] = values
    return W


def save_weights(path, W) -> None:
    np.savetxt(path, np.asarray(W, dtype=float), delimiter=",", fmt="%.17g")


def load_weights(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
