"""Experiment configuration: a flat TOML document, strictly validated.

Example::

    experiment = "barrier_curve"
    solution_source = "uniform"
    replicates = 20
    base_seed = 0
    output_dir = "runs/barrier_curve"

    [grid]
    m = "7:36"          # inclusive range, or a list of ints
    M = [6]
    d = [8]

Grid keys: ``m`` or ``m_over_M`` (list of ratios, rounded to the nearest
int), ``M``, ``d`` or ``d_minus_M`` (d = M + k), or an explicit ``points``
list of ``[m, M, d]`` triples. Lists combine as a cartesian product;
combinations with d < M are dropped. Optional tables: ``[train]`` (fields
of :class:`~relu_lmc.train.TrainConfig` except ``seed``), ``[pq]`` (``p``,
``q``) and ``[sweep]`` (``lr0`` list, for ``pqi_vs_lr``).
"""

from __future__ import annotations

import dataclasses
import itertools
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..sparsity import PQParams
from ..train import TrainConfig

EXPERIMENTS = (
    "overlap_curve",
    "barrier_curve",
    "normalized_barrier",
    "double_descent",
    "pqi_vs_width",
    "pqi_vs_lr",
    "uniform_validation",
    "decay_slope",
)
SOURCES = ("gd", "sgd", "uniform")

_TOP_KEYS = {
    "experiment", "solution_source", "replicates", "base_seed", "output_dir",
    "grid_points", "workers", "zero_tol", "grid", "train", "pq", "sweep",
}
_GRID_KEYS = {"m", "m_over_M", "M", "d", "d_minus_M", "points"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    grid: tuple
    """Sorted, de-duplicated (m, M, d) triples."""
    solution_source: str = "uniform"
    replicates: int = 20
    base_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: Path = Path("runs")
    grid_points: int = 11
    workers: int = 1
    zero_tol: float = 1e-6
    pq: PQParams = field(default_factory=PQParams)
    lr0_values: tuple = ()

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.solution_source not in SOURCES:
            raise ConfigError(f"solution_source must be one of {SOURCES}, got {self.solution_source!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if not self.grid:
            raise ConfigError("grid is empty")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.experiment == "pqi_vs_lr" and not self.lr0_values:
            raise ConfigError("pqi_vs_lr needs [sweep] lr0 = [...]")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "solution_source": self.solution_source,
            "replicates": self.replicates,
            "base_seed": self.base_seed,
            "output_dir": str(self.output_dir),
            "grid_points": self.grid_points,
            "workers": self.workers,
            "zero_tol": self.zero_tol,
            "grid": {"points": [list(p) for p in self.grid]},
            "train": {k: v for k, v in dataclasses.asdict(self.train).items() if k != "seed" and v is not None},
            "pq": {"p": self.pq.p, "q": self.pq.q},
            "sweep": {"lr0": list(self.lr0_values)},
        }


def _int_list(value, key):
    if isinstance(value, str):
        try:
            lo, hi = (int(x) for x in value.split(":"))
        except ValueError:
            raise ConfigError(f"grid.{key}: expected 'start:stop', got {value!r}") from None
        return list(range(lo, hi + 1))
    if isinstance(value, int):
        return [value]
    if isinstance(value, list) and all(isinstance(v, int) for v in value):
        return value
    raise ConfigError(f"grid.{key}: expected an int, a list of ints or 'start:stop'")


def expand_grid(table: dict) -> tuple:
    unknown = set(table) - _GRID_KEYS
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    if "points" in table:
        if set(table) != {"points"}:
            raise ConfigError("grid.points cannot be combined with other grid keys")
        points = [tuple(int(v) for v in p) for p in table["points"]]
        if any(len(p) != 3 for p in points):
            raise ConfigError("grid.points entries must be [m, M, d]")
    else:
        if ("m" in table) == ("m_over_M" in table):
            raise ConfigError("grid needs exactly one of m / m_over_M")
        if ("d" in table) == ("d_minus_M" in table):
            raise ConfigError("grid needs exactly one of d / d_minus_M")
        if "M" not in table:
            raise ConfigError("grid needs M")
        points = []
        for M in _int_list(table["M"], "M"):
            if "m" in table:
                ms = _int_list(table["m"], "m")
            else:
                ms = [int(round(r * M)) for r in table["m_over_M"]]
            ds = _int_list(table["d"], "d") if "d" in table else [M + k for k in _int_list(table["d_minus_M"], "d_minus_M")]
            points.extend(itertools.product(ms, [M], ds))
    points = sorted({p for p in points if p[2] >= p[1] >= 1 and p[0] >= 1})
    return tuple(points)


def from_dict(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    if "experiment" not in doc or "grid" not in doc:
        raise ConfigError("config needs 'experiment' and a [grid] table")
    train_doc = dict(doc.get("train", {}))
    bad = set(train_doc) - _TRAIN_KEYS
    if bad:
        raise ConfigError(f"unknown train keys: {sorted(bad)}")
    pq_doc = dict(doc.get("pq", {}))
    if set(pq_doc) - {"p", "q"}:
        raise ConfigError(f"unknown pq keys: {sorted(set(pq_doc) - {'p', 'q'})}")
    sweep = dict(doc.get("sweep", {}))
    if set(sweep) - {"lr0"}:
        raise ConfigError(f"unknown sweep keys: {sorted(set(sweep) - {'lr0'})}")
    try:
        train = TrainConfig(**train_doc)
        pq = PQParams(**pq_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        experiment=doc["experiment"],
        grid=expand_grid(doc["grid"]),
        solution_source=doc.get("solution_source", "uniform"),
        replicates=int(doc.get("replicates", 20)),
        base_seed=int(doc.get("base_seed", 0)),
        train=train,
        output_dir=Path(doc.get("output_dir", "runs")),
        grid_points=int(doc.get("grid_points", 11)),
        workers=int(doc.get("workers", 1)),
        zero_tol=float(doc.get("zero_tol", 1e-6)),
        pq=pq,
        lr0_values=tuple(float(v) for v in sweep.get("lr0", ())),
    )


def load(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(doc)
