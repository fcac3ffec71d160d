"""Gradient descent on the exact population loss, and online SGD."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernel import ProblemConfig, loss_and_grad, population_loss, sample_sphere

DIVERGENCE_LOSS = 1e6
GD_LOSS_TOL = 1e-10
SGD_LOSS_TOL = 1e-6


class TrainingDivergedError(ArithmeticError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss:.3g})")
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "GD"
    lr0: float = 2.0
    lr_schedule: str = "width"
    """``"width"`` uses lr0 / m, ``"constant"`` uses lr0."""
    batch: int = 64
    max_iters: int = 200_000
    loss_tol: Optional[float] = None
    """Defaults to 1e-10 for GD and 1e-6 for SGD."""
    init_std: Optional[float] = None
    """Defaults to 1 / (m d)."""
    seed: int = 0
    trace_stride: int = 100
    eval_stride: int = 100

    def __post_init__(self):
        if self.mode not in ("GD", "SGD"):
            raise ValueError(f"mode must be GD or SGD, got {self.mode!r}")
        if self.lr_schedule not in ("width", "constant"):
            raise ValueError(f"lr_schedule must be 'width' or 'constant', got {self.lr_schedule!r}")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.loss_tol is not None and self.loss_tol < 0:
            raise ValueError("loss_tol must be nonnegative")
        if self.init_std is not None and self.init_std < 0:
            raise ValueError("init_std must be nonnegative")
        if self.batch < 1 or self.trace_stride < 1 or self.eval_stride < 1:
            raise ValueError("batch and strides must be >= 1")

    @property
    def tol(self) -> float:
        if self.loss_tol is not None:
            return self.loss_tol
        return GD_LOSS_TOL if self.mode == "GD" else SGD_LOSS_TOL

    def learning_rate(self, m: int) -> float:
        return self.lr0 / m if self.lr_schedule == "width" else self.lr0

    def std(self, config: ProblemConfig) -> float:
        return 1.0 / (config.m * config.d) if self.init_std is None else self.init_std

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainResult:
    weights: np.ndarray
    final_loss: float
    iterations: int
    converged: bool
    loss_trace: list = field(default_factory=list)
    """(iteration, loss) pairs as observed."""
    seed: object = None


def init_weights(config: ProblemConfig, train: TrainConfig, seed=None) -> np.ndarray:
    """I.i.d. N(0, std^2) entries; ``seed`` overrides ``train.seed``."""
    rng = np.random.default_rng(train.seed if seed is None else seed)
    return rng.normal(0.0, train.std(config), size=(config.m, config.d))


def train_gd_many(config: ProblemConfig, train: TrainConfig, seeds: Sequence) -> list:
    """Run independent GD trajectories, one per seed, advanced in lockstep.

    Finished runs are frozen, so each trajectory is the same as a solo run.
    Returns a list aligned with ``seeds`` holding a :class:`TrainResult` or,
    for a run that blew up, the :class:`TrainingDivergedError` instance.
    """
    seeds = list(seeds)
    lr = train.learning_rate(config.m)
    tol = train.tol
    W = np.stack([init_weights(config, train, s) for s in seeds]) if seeds else np.zeros((0, config.m, config.d))
    traces = [[] for _ in seeds]
    out: list = [None] * len(seeds)
    active = np.arange(len(seeds))

    for it in range(train.max_iters + 1):
        if active.size == 0:
            break
        loss, grad = loss_and_grad(W[active], config)
        record = it % train.trace_stride == 0
        keep = np.ones(active.size, dtype=bool)
        for k, r in enumerate(active):
            L = float(loss[k])
            if not np.isfinite(L) or L > DIVERGENCE_LOSS:
                out[r] = TrainingDivergedError(it, L)
                keep[k] = False
                continue
            done = L <= tol or it == train.max_iters
            if record or done:
                traces[r].append((it, L))
            if done:
                out[r] = TrainResult(W[r].copy(), L, it, L <= tol, traces[r], seeds[r])
                keep[k] = False
        active, grad = active[keep], grad[keep]
        W[active] -= lr * grad
    return out


def train_gd(config: ProblemConfig, train: TrainConfig) -> TrainResult:
    """Plain full-batch GD on the population loss."""
    if train.mode != "GD":
        raise ValueError("train_gd needs mode='GD'")
    (result,) = train_gd_many(config, train, [train.seed])
    if isinstance(result, TrainingDivergedError):
        raise result
    return result


def sgd_gradient(W: np.ndarray, X: np.ndarray, M: int) -> np.ndarray:
    """Gradient of the mean squared error on the mini-batch ``X``."""
    pre = X @ W.T
    resid = np.maximum(pre, 0.0).sum(axis=1) - np.maximum(X[:, :M], 0.0).sum(axis=1)
    gate = (pre > 0).astype(float)
    return (2.0 / X.shape[0]) * (gate * resid[:, None]).T @ X


def train_sgd(config: ProblemConfig, train: TrainConfig) -> TrainResult:
    """Online SGD: every step draws a fresh batch uniform on the sphere.

    Convergence is judged on the exact population loss every ``eval_stride``
    steps, and those evaluations form the loss trace.
    """
    if train.mode != "SGD":
        raise ValueError("train_sgd needs mode='SGD'")
    rng = np.random.default_rng(train.seed)
    W = rng.normal(0.0, train.std(config), size=(config.m, config.d))
    lr = train.learning_rate(config.m)
    trace = []
    for it in range(train.max_iters + 1):
        if it % train.eval_stride == 0 or it == train.max_iters:
            L = population_loss(W, config)
            if not np.isfinite(L) or L > DIVERGENCE_LOSS:
                raise TrainingDivergedError(it, L)
            trace.append((it, L))
            if L <= train.tol or it == train.max_iters:
                return TrainResult(W, L, it, L <= train.tol, trace, train.seed)
        X = sample_sphere(rng, train.batch, config.d)
        W = W - lr * sgd_gradient(W, X, config.M)
        if not np.all(np.isfinite(W)):
            raise TrainingDivergedError(it, float("nan"))
    raise AssertionError("unreachable")


def train(config: ProblemConfig, train_config: TrainConfig) -> TrainResult:
    if train_config.mode == "GD":
        return train_gd(config, train_config)
    return train_sgd(config, train_config)


def save_trace(path, result: TrainResult) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,loss\n")
        for it, L in result.loss_trace:
            fh.write(f"{it},{L:.17g}\n")
