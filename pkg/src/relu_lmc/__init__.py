"""Exact population-loss tools for two-layer ReLU teacher-student networks:
the global-minimum manifold, permutation alignment and linear-path barriers."""

__version__ = "0.1.0"

from .align import barrier, barrier_modulo_permutation, best_permutation, expected_overlap, overlap
from .kernel import ProblemConfig, kappa, kappa_prime, loss_and_grad, mc_loss, population_grad, population_loss
from .manifold import classify, classify_dominant, is_global_min, sample_uniform
from .sparsity import PQParams, pq_by_row, pq_flat, pq_index
from .train import TrainConfig, train, train_gd, train_sgd

__all__ = [
    "ProblemConfig", "kappa", "kappa_prime", "population_loss", "population_grad", "loss_and_grad", "mc_loss",
    "is_global_min", "classify", "classify_dominant", "sample_uniform",
    "TrainConfig", "train", "train_gd", "train_sgd",
    "overlap", "expected_overlap", "best_permutation", "barrier", "barrier_modulo_permutation",
    "PQParams", "pq_index", "pq_flat", "pq_by_row",
]
