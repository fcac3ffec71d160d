"""Population loss of a two-layer ReLU student against an orthonormal teacher.

Inputs are uniform on the unit sphere S^{d-1} and the teacher neurons are the
first M canonical basis vectors, so the squared-error loss has a closed form
in terms of the arc-cosine kernel

    kappa(t) = ((pi - arccos t) t + sqrt(1 - t^2)) / (2 pi d).

All loss/gradient routines accept an optional leading batch axis: ``W`` may be
``(m, d)`` or ``(R, m, d)``. Batched evaluation performs the same arithmetic
per slice as the unbatched call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_FP = 1e-12
EPS_ZERO = 1e-12
DOMAIN_TOL = 1e-12
MC_CHUNK = 65536


class KernelDomainError(ValueError):
    """Raised when a cosine falls outside [-1, 1] by more than round-off."""


@dataclass(frozen=True)
class ProblemConfig:
    """Student width ``m``, teacher width ``M`` and input dimension ``d``."""

    m: int
    M: int
    d: int

    def __post_init__(self):
        for name in ("m", "M", "d"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)!r}")
        if self.M > self.d:
            raise ValueError(f"teacher width M={self.M} exceeds input dimension d={self.d}")

    @property
    def over_realized(self) -> bool:
        return self.m >= self.M

    def teacher(self) -> np.ndarray:
        """The teacher weight matrix, rows e_1..e_M."""
        return np.eye(self.M, self.d)

    def check_shape(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.ndim < 2 or W.shape[-2:] != (self.m, self.d):
            raise ValueError(f"expected weights of shape (..., {self.m}, {self.d}), got {W.shape}")
        return W


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    n_samples: int
    seed: int


def _clamp_cos(t):
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + DOMAIN_TOL) or np.any(np.isnan(t)):
        raise KernelDomainError("cosine outside [-1, 1]; upstream normalization is corrupted")
    return np.clip(t, -1.0, 1.0)


def kappa(t, d: int):
    """Arc-cosine kernel of degree one for inputs uniform on S^{d-1}."""
    t = _clamp_cos(t)
    return ((np.pi - np.arccos(t)) * t + np.sqrt(1.0 - t * t)) / (2.0 * np.pi * d)


def kappa_prime(t, d: int):
    """Derivative of :func:`kappa` in ``t``."""
    t = _clamp_cos(t)
    return (np.pi - np.arccos(t)) / (2.0 * np.pi * d)


def _kappa_parts(t, d: int):
    # kappa(t) - t kappa'(t) = sqrt(1 - t^2) / (2 pi d); shares one arccos.
    t = _clamp_cos(t)
    angle = np.pi - np.arccos(t)
    s = np.sqrt(1.0 - t * t)
    c = 2.0 * np.pi * d
    return (angle * t + s) / c, angle / c, s / c


def _polar(W: np.ndarray):
    norms = np.linalg.norm(W, axis=-1)
    live = norms >= EPS_ZERO
    safe = np.where(live, norms, 1.0)
    U = np.where(live[..., None], W / safe[..., None], 0.0)
    return np.where(live, norms, 0.0), U, live


def teacher_self_term(M: int, d: int) -> float:
    """Sum over teacher pairs: M kappa(1) + M(M-1) kappa(0)."""
    return M / (2.0 * d) + M * (M - 1) / (2.0 * np.pi * d)


def _combine(norms, k, k_t, M: int, d: int):
    student = (norms[..., None, :] @ (k @ norms[..., None]))[..., 0, 0]
    cross = (norms[..., None, :] @ k_t)[..., 0, :].sum(axis=-1)
    return np.maximum(student + teacher_self_term(M, d) - 2.0 * cross, 0.0)


def population_loss(W, config: ProblemConfig):
    """Exact population loss. Returns a float, or an array for batched ``W``."""
    W = config.check_shape(W)
    norms, U, _ = _polar(W)
    k = kappa(U @ np.swapaxes(U, -1, -2), config.d)
    value = _combine(norms, k, kappa(U[..., : config.M], config.d), config.M, config.d)
    return float(value) if np.ndim(value) == 0 else value


def _loss_and_grad(W: np.ndarray, M: int, d: int):
    norms, U, live = _polar(W)

    k, kp, s = _kappa_parts(U @ np.swapaxes(U, -1, -2), d)
    k_t, kp_t, s_t = _kappa_parts(U[..., :M], d)
    loss = _combine(norms, k, k_t, M, d)

    radial = (s @ norms[..., None])[..., 0] - s_t.sum(axis=-1)
    tangential = (kp * norms[..., None, :]) @ U
    tangential[..., :M] -= kp_t
    grad = 2.0 * (radial[..., None] * U + tangential)
    return loss, np.where(live[..., None], grad, 0.0)


def population_grad(W, config: ProblemConfig) -> np.ndarray:
    """Analytic gradient of :func:`population_loss`; zero rows get zero gradient."""
    W = config.check_shape(W)
    return _loss_and_grad(W, config.M, config.d)[1]


def loss_and_grad(W, config: ProblemConfig):
    """Loss and gradient from one shared kernel evaluation."""
    W = config.check_shape(W)
    loss, grad = _loss_and_grad(W, config.M, config.d)
    return (float(loss) if np.ndim(loss) == 0 else loss), grad


def sample_sphere(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` points uniform on S^{d-1} via normalized standard Gaussians."""
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def network_output(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.maximum(X @ W.T, 0.0).sum(axis=1)


def teacher_output(X: np.ndarray, M: int) -> np.ndarray:
    return np.maximum(X[:, :M], 0.0).sum(axis=1)


def mc_loss(W, config: ProblemConfig, n: int, seed: int) -> McEstimate:
    """Monte-Carlo estimate of the population loss.

    Points are drawn in fixed chunks of ``MC_CHUNK`` from one seeded stream,
    so the estimate depends only on ``(W, n, seed)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    W = config.check_shape(W)
    if W.ndim != 2:
        raise ValueError("mc_loss takes a single weight matrix")
    rng = np.random.default_rng(seed)
    values = np.empty(n)
    for start in range(0, n, MC_CHUNK):
        stop = min(start + MC_CHUNK, n)
        X = sample_sphere(rng, stop - start, config.d)
        values[start:stop] = (network_output(W, X) - teacher_output(X, config.M)) ** 2
    stderr = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(values.mean()), stderr, n, seed)
