"""PQ-index sparsity of weight matrices.

    I_{p,q}(v) = 1 - n^{1/q - 1/p} ||v||_p / ||v||_q,   0 < p < q,

is 0 for a constant vector and maximal, 1 - n^{1/q - 1/p}, for a one-hot one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ZeroVectorError(ValueError):
    """The PQ index is undefined for an all-zero vector."""


@dataclass(frozen=True)
class PQParams:
    p: float = 0.5
    q: float = 1.0

    def __post_init__(self):
        if not 0 < self.p < self.q:
            raise ValueError(f"need 0 < p < q, got p={self.p}, q={self.q}")

    def max_index(self, n: int) -> float:
        return 1.0 - n ** (1.0 / self.q - 1.0 / self.p)


DEFAULT_PQ = PQParams()


def _pnorm(a: np.ndarray, p: float) -> float:
    return float(np.sum(a**p) ** (1.0 / p))


def pq_index(v, params: PQParams = DEFAULT_PQ) -> float:
    a = np.abs(np.asarray(v, dtype=float)).ravel()
    if a.size == 0 or not np.any(a > 0):
        raise ZeroVectorError("PQ index of an all-zero vector is undefined")
    # rescale first so large or tiny entries do not over/underflow the powers
    a = a / a.max()
    n = a.size
    return 1.0 - n ** (1.0 / params.q - 1.0 / params.p) * _pnorm(a, params.p) / _pnorm(a, params.q)


def pq_flat(W, params: PQParams = DEFAULT_PQ) -> float:
    """PQ index of all entries of ``W`` taken as one vector."""
    return pq_index(np.asarray(W, dtype=float).ravel(), params)


def pq_by_row(W, params: PQParams = DEFAULT_PQ) -> float:
    """PQ index of the vector of row (neuron) norms."""
    return pq_index(np.linalg.norm(np.asarray(W, dtype=float), axis=1), params)


def zero_rows(W, tol: float = 1e-6) -> int:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return int(np.sum(np.linalg.norm(np.asarray(W, dtype=float), axis=1) <= tol))
