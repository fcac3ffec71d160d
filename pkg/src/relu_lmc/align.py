"""Neuron matching, overlap statistics and linear-path barriers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binom, poisson

from .kernel import McEstimate, ProblemConfig, population_loss
from .manifold import (
    CLASSIFY_TOL,
    ClassifiedSolution,
    classify,
    classify_dominant,
    sample_type_vector,
)

EXACT_OVERLAP_MAX = 4096
DEFAULT_GRID = 11


@dataclass(frozen=True)
class MatchReport:
    matched_sets: tuple
    """Per type j = 1..M, the slots where both solutions hold a type-j neuron."""
    unmatched_1: np.ndarray
    """Slots of W1 not in any matched set or zero-zero pair."""
    unmatched_2: np.ndarray
    """Original row indices of W2 not in any matched set or zero-zero pair."""
    overlap_C: int
    proportion_P: float
    matched_mass: np.ndarray
    """Shape (M, 2): summed on-type values of the matched rows in each solution."""
    alpha1: np.ndarray
    alpha2: np.ndarray
    zero_pairs: int = 0


@dataclass(frozen=True)
class BarrierProfile:
    lambdas: np.ndarray
    losses: np.ndarray
    endpoint_losses: tuple
    barrier: float

    @property
    def excess(self) -> np.ndarray:
        """Loss along the path minus the chord between endpoint losses."""
        l1, l2 = self.endpoint_losses
        return self.losses - (self.lambdas * l1 + (1.0 - self.lambdas) * l2)


def _check_types(a1, a2):
    a1 = np.asarray(a1, dtype=int)
    a2 = np.asarray(a2, dtype=int)
    if a1.shape != a2.shape or a1.ndim != 1:
        raise ValueError(f"type vectors must have equal length M, got {a1.shape} and {a2.shape}")
    if np.any(a1 < 0) or np.any(a2 < 0):
        raise ValueError("type vectors must be nonnegative")
    if a1.sum() != a2.sum():
        raise ValueError(f"type vectors imply different widths ({a1.sum()} vs {a2.sum()} extra neurons)")
    return a1, a2


def overlap(a1, a2) -> int:
    """Number of neurons matchable type by type: sum_j min(a1_j, a2_j) + M."""
    a1, a2 = _check_types(a1, a2)
    return int(np.minimum(a1, a2).sum() + a1.size)


def overlap_proportion(a1, a2) -> float:
    a1, a2 = _check_types(a1, a2)
    return overlap(a1, a2) / float(a1.sum() + a1.size)


def _mean_abs_diff_binomial(n: int, p: float) -> float:
    pmf = binom.pmf(np.arange(n + 1), n, p)
    # distribution of X - Y, indices -n..n
    diff = np.convolve(pmf, pmf[::-1])
    return float(np.abs(np.arange(-n, n + 1)) @ diff)


def exact_overlap(m: int, M: int) -> float:
    """T(m, M) = 1 - (M / 2m) E|X - Y| with X, Y iid Binomial(m - M, 1/M)."""
    if not 1 <= M <= m:
        raise ValueError(f"need m >= M >= 1, got m={m}, M={M}")
    n = m - M
    if n > EXACT_OVERLAP_MAX:
        raise ValueError(f"m - M = {n} exceeds {EXACT_OVERLAP_MAX}; use the Monte-Carlo method")
    if n == 0:
        return 1.0
    return 1.0 - M / (2.0 * m) * _mean_abs_diff_binomial(n, 1.0 / M)


def mc_overlap(m: int, M: int, n: int, seed) -> McEstimate:
    """Monte-Carlo estimate of the expected overlap proportion."""
    if not 1 <= M <= m:
        raise ValueError(f"need m >= M >= 1, got m={m}, M={M}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    a1 = sample_type_vector(rng, m, M, size=n)
    a2 = sample_type_vector(rng, m, M, size=n)
    P = (np.minimum(a1, a2).sum(axis=1) + M) / m
    stderr = float(P.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return McEstimate(float(P.mean()), stderr, n, seed)


def expected_overlap(m: int, M: int, method: str = "exact", n: int = 10_000, seed=0) -> float:
    if method == "exact":
        return exact_overlap(m, M)
    if method == "monte_carlo":
        return mc_overlap(m, M, n, seed).mean
    raise ValueError(f"unknown method {method!r}")


def limit_overlap(t: float) -> float:
    """Gaussian approximation 1 - sqrt(t (1 - t) / pi) of the overlap at M/m = t.

    It replaces X - Y by a normal variable, which is accurate only when the
    per-type counts have large variance, i.e. for small t. At fixed t the
    counts stay O(1); :func:`poisson_limit_overlap` gives the actual limit.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    return 1.0 - np.sqrt(t * (1.0 - t) / np.pi)


def poisson_limit_overlap(t: float) -> float:
    """Limit of the expected overlap as m, M -> infinity with M/m = t.

    Binomial(m - M, 1/M) tends to Poisson((1 - t)/t), so
    T -> 1 - (t/2) E|X - Y| with X, Y iid Poisson((1 - t)/t).
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    lam = (1.0 - t) / t
    if lam == 0.0:
        return 1.0
    top = int(np.ceil(lam + 40.0 * np.sqrt(lam) + 40.0))
    pmf = poisson.pmf(np.arange(top + 1), lam)
    diff = np.convolve(pmf, pmf[::-1])
    return 1.0 - 0.5 * t * float(np.abs(np.arange(-top, top + 1)) @ diff)


def _labels(W, config, tol, strict) -> ClassifiedSolution:
    if strict:
        return classify(W, config, tol)
    return classify_dominant(W, config, tol)


def _ranked(cls: ClassifiedSolution, label: int) -> np.ndarray:
    idx = np.flatnonzero(cls.labels == label)
    return idx[np.argsort(-cls.values[idx], kind="stable")]


def best_permutation(W1, W2, config: ProblemConfig, tol: float = CLASSIFY_TOL, strict: bool = True):
    """Permute the rows of ``W2`` to line up with ``W1`` type by type.

    Within each type, neurons are ranked by value (largest first, ties by row
    index) and paired rank by rank while both solutions have neurons left.
    Zero rows pair with zero rows. Whatever remains of ``W2`` fills the
    remaining slots in ascending index order.

    ``strict=False`` labels rows with :func:`classify_dominant` (``tol`` is
    then the zero-row threshold) so trained or under-realized weights can be
    aligned too.

    Returns ``(perm, report)`` where ``W2[perm]`` is the aligned matrix.
    """
    W1 = config.check_shape(W1)
    W2 = config.check_shape(W2)
    c1 = _labels(W1, config, tol, strict)
    c2 = _labels(W2, config, tol, strict)
    m, M = config.m, config.M

    perm = np.full(m, -1, dtype=int)
    used = np.zeros(m, dtype=bool)
    matched_sets = []
    mass = np.zeros((M, 2))
    for j in range(1, M + 1):
        slots, rows = _ranked(c1, j), _ranked(c2, j)
        k = min(slots.size, rows.size)
        perm[slots[:k]] = rows[:k]
        used[rows[:k]] = True
        matched_sets.append(np.sort(slots[:k]))
        mass[j - 1] = c1.values[slots[:k]].sum(), c2.values[rows[:k]].sum()

    z1, z2 = np.flatnonzero(c1.labels == 0), np.flatnonzero(c2.labels == 0)
    k0 = min(z1.size, z2.size)
    perm[z1[:k0]] = z2[:k0]
    used[z2[:k0]] = True

    open_slots = np.flatnonzero(perm < 0)
    leftover = np.flatnonzero(~used)
    perm[open_slots] = leftover

    C = int(sum(s.size for s in matched_sets))
    report = MatchReport(
        matched_sets=tuple(matched_sets),
        unmatched_1=open_slots,
        unmatched_2=leftover,
        overlap_C=C,
        proportion_P=C / m,
        matched_mass=mass,
        alpha1=c1.alpha,
        alpha2=c2.alpha,
        zero_pairs=k0,
    )
    return perm, report


def barrier(W1, W2, config: ProblemConfig, grid_points: int = DEFAULT_GRID) -> BarrierProfile:
    """Loss barrier on the straight line lambda W1 + (1 - lambda) W2."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    W1 = config.check_shape(W1)
    W2 = config.check_shape(W2)
    if W1.ndim != 2 or W2.ndim != 2:
        raise ValueError("barrier takes single weight matrices")
    lambdas = np.linspace(0.0, 1.0, grid_points)
    path = lambdas[:, None, None] * W1 + (1.0 - lambdas)[:, None, None] * W2
    losses = np.asarray(population_loss(path, config))
    ends = (population_loss(W1, config), population_loss(W2, config))
    chord = lambdas * ends[0] + (1.0 - lambdas) * ends[1]
    return BarrierProfile(lambdas, losses, ends, float(np.max(losses - chord)))


def barrier_modulo_permutation(W1, W2, config: ProblemConfig, grid_points: int = DEFAULT_GRID,
                               tol: float = CLASSIFY_TOL, strict: bool = True):
    perm, report = best_permutation(W1, W2, config, tol=tol, strict=strict)
    W2 = config.check_shape(W2)
    return barrier(W1, W2[perm], config, grid_points), report


def save_profile(path, profile: BarrierProfile) -> None:
    """Write ``lambda,loss`` rows."""
    with open(path, "w") as fh:
        fh.write("lambda,loss\n")
        for lam, loss in zip(profile.lambdas, profile.losses):
            fh.write(f"{lam:.17g},{loss:.17g}\n")


def save_match_report(path, report: MatchReport) -> None:
    """Write one row per type: alpha of each solution, matched count and mass."""
    with open(path, "w") as fh:
        fh.write("type,alpha1,alpha2,matched,gamma1,gamma2\n")
        for j, slots in enumerate(report.matched_sets):
            g1, g2 = report.matched_mass[j]
            fh.write(f"{j + 1},{report.alpha1[j]},{report.alpha2[j]},{slots.size},{g1:.17g},{g2:.17g}\n")
