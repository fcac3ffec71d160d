"""Experiment sweeps: seeded replicates that write CSV results.

Every experiment is split into *units* (one grid point, or one grid point and
learning rate for ``pqi_vs_lr``). A unit's rows depend only on the config and
the unit itself, so units can run in any order or in worker processes; rows
are merged back in (tag, m, M, d, replicate) order.

Replicate ``r`` uses seed ``s = base_seed + r``. Pair experiments draw the two
solutions from seeds ``(s, 0)`` and ``(s, 1)``; single-solution experiments
use ``(s, 0)``. ``overlap_curve`` is the exception: its ``replicates`` pair
draws for a grid point come from one stream seeded by ``(base_seed, m, M)``
and only aggregate rows (replicate = -1) are written.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .. import __version__
from ..align import (
    EXACT_OVERLAP_MAX,
    barrier,
    barrier_modulo_permutation,
    exact_overlap,
    limit_overlap,
    mc_overlap,
    poisson_limit_overlap,
)
from ..kernel import KernelDomainError, ProblemConfig
from ..manifold import (
    ClassificationError,
    UnsupportedRegimeError,
    classify_dominant,
    sample_uniform,
)
from ..sparsity import ZeroVectorError, pq_by_row, pq_flat, zero_rows
from ..train import TrainConfig, TrainingDivergedError, TrainResult, train_gd_many, train_sgd
from .config import ExperimentConfig

NULL_DIRECT = 1e-12
# exact manifold samples have exact zeros off-type; any positive entry is signal
EXACT_SAMPLE_TOL = np.finfo(float).tiny
RECOVERABLE = (TrainingDivergedError, ClassificationError, UnsupportedRegimeError,
               KernelDomainError, ZeroVectorError)


class ResultRow(NamedTuple):
    experiment: str
    tag: str
    m: int
    M: int
    d: int
    replicate: int
    seed: int
    metric: str
    value: Optional[float]
    note: str = ""


def _error_note(exc: Exception) -> str:
    names = {
        TrainingDivergedError: "diverged",
        ClassificationError: "classification_failed",
        UnsupportedRegimeError: "unsupported_regime",
        KernelDomainError: "kernel_domain",
        ZeroVectorError: "zero_vector",
    }
    return names.get(type(exc), type(exc).__name__)


class _Solution(NamedTuple):
    weights: Optional[np.ndarray]
    error: Optional[Exception]
    result: Optional[TrainResult] = None

    @property
    def converged(self) -> bool:
        return self.result is None or self.result.converged


def _solutions(cfg: ExperimentConfig, config: ProblemConfig, seeds, train: TrainConfig) -> list:
    if cfg.solution_source == "uniform":
        out = []
        for s in seeds:
            try:
                out.append(_Solution(sample_uniform(config, s), None))
            except RECOVERABLE as exc:
                out.append(_Solution(None, exc))
        return out
    if cfg.solution_source == "gd":
        results = train_gd_many(config, train.replace(mode="GD"), seeds)
    else:
        results = []
        for s in seeds:
            try:
                results.append(train_sgd(config, train.replace(mode="SGD", seed=s)))
            except RECOVERABLE as exc:
                results.append(exc)
    return [
        _Solution(None, r) if isinstance(r, Exception) else _Solution(r.weights, None, r)
        for r in results
    ]


def _seeds(cfg: ExperimentConfig):
    return [cfg.base_seed + r for r in range(cfg.replicates)]


# ---------------------------------------------------------------- pair units

PAIR_METRICS = ("barrier_direct", "barrier_permuted", "overlap_P", "matched_mass",
                "endpoint_loss_1", "endpoint_loss_2")


def _pair_unit(cfg: ExperimentConfig, point, tag: str, train: TrainConfig) -> list:
    m, M, d = point
    config = ProblemConfig(m, M, d)
    seeds = _seeds(cfg)
    sols = _solutions(cfg, config, [(s, k) for s in seeds for k in (0, 1)], train)
    exact = cfg.solution_source == "uniform"
    rows = []
    for r, s in enumerate(seeds):
        a, b = sols[2 * r], sols[2 * r + 1]

        def emit(metric, value, note=""):
            rows.append(ResultRow(cfg.experiment, tag, m, M, d, r, s, metric, value, note))

        note = ""
        if a.error or b.error:
            note = _error_note(a.error or b.error)
        elif m >= M and not (a.converged and b.converged):
            # over-realized barriers are defined between global minima
            note = "not_converged"
        if note:
            for metric in PAIR_METRICS:
                emit(metric, None, note)
            continue
        try:
            direct = barrier(a.weights, b.weights, config, cfg.grid_points)
            permuted, report = barrier_modulo_permutation(
                a.weights, b.weights, config, cfg.grid_points,
                tol=EXACT_SAMPLE_TOL if exact else cfg.zero_tol, strict=exact,
            )
        except RECOVERABLE as exc:
            for metric in PAIR_METRICS:
                emit(metric, None, _error_note(exc))
            continue
        emit("barrier_direct", direct.barrier)
        emit("barrier_permuted", permuted.barrier)
        emit("overlap_P", report.proportion_P)
        emit("matched_mass", float(report.matched_mass.mean()))
        emit("endpoint_loss_1", direct.endpoint_losses[0])
        emit("endpoint_loss_2", direct.endpoint_losses[1])
    return rows


def double_descent_run(cfg: ExperimentConfig, point) -> list:
    """Permuted and direct barriers of GD solution pairs at one width.

    Under-realized widths (m < M) keep nonzero endpoint losses, which the
    barrier subtracts along the chord; neurons are aligned by their dominant
    teacher coordinate.
    """
    if cfg.solution_source != "gd":
        raise ValueError("double_descent needs solution_source = 'gd' (no manifold sampling for m < M)")
    return _pair_unit(cfg, point, "", cfg.train)


# -------------------------------------------------------------- single units

def _single_unit(cfg: ExperimentConfig, point, tag: str, train: TrainConfig) -> list:
    m, M, d = point
    config = ProblemConfig(m, M, d)
    seeds = _seeds(cfg)
    sols = _solutions(cfg, config, [(s, 0) for s in seeds], train)
    rows = []
    for r, (s, sol) in enumerate(zip(seeds, sols)):

        def emit(metric, value, note=""):
            rows.append(ResultRow(cfg.experiment, tag, m, M, d, r, s, metric, value, note))

        if sol.result is not None or sol.error is not None:
            emit("diverged", float(isinstance(sol.error, TrainingDivergedError)))
        if sol.error is not None:
            for metric in ("pq_by_row", "pq_flat", "zero_rows"):
                emit(metric, None, _error_note(sol.error))
            continue
        W = sol.weights
        if sol.result is not None:
            emit("converged", float(sol.result.converged))
            emit("final_loss", sol.result.final_loss)
            emit("iterations", float(sol.result.iterations))
        try:
            emit("pq_by_row", pq_by_row(W, cfg.pq))
            emit("pq_flat", pq_flat(W, cfg.pq))
        except ZeroVectorError:
            emit("pq_by_row", None, "zero_vector")
            emit("pq_flat", None, "zero_vector")
        emit("zero_rows", float(zero_rows(W, cfg.zero_tol)))
    return rows


def _validation_unit(cfg: ExperimentConfig, point, tag: str, train: TrainConfig) -> list:
    m, M, d = point
    config = ProblemConfig(m, M, d)
    seeds = _seeds(cfg)
    sols = _solutions(cfg, config, [(s, 0) for s in seeds], train)
    rows = []
    for r, (s, sol) in enumerate(zip(seeds, sols)):

        def emit(metric, value, note=""):
            rows.append(ResultRow(cfg.experiment, tag, m, M, d, r, s, metric, value, note))

        note = _error_note(sol.error) if sol.error else ("" if sol.converged else "not_converged")
        if note:
            for j in range(1, M + 1):
                emit(f"alpha_{j}", None, note)
            continue
        cls = classify_dominant(sol.weights, config, cfg.zero_tol)
        for j in range(1, M + 1):
            emit(f"alpha_{j}", float(cls.alpha[j - 1]))
        emit("offtype_residual", cls.residual)
        if M == 1:
            for k, v in enumerate(np.sort(cls.values)[::-1], start=1):
                emit(f"value_rank_{k}", float(v))
    return rows


def _overlap_unit(cfg: ExperimentConfig, point, tag: str, train: TrainConfig) -> list:
    m, M, d = point
    rows = []

    def emit(metric, value, note=""):
        rows.append(ResultRow(cfg.experiment, tag, m, M, d, -1, cfg.base_seed, metric, value, note))

    if m < M:
        for metric in ("mean_P", "stderr_P", "exact_T", "limit_T", "poisson_limit_T"):
            emit(metric, None, "unsupported_regime")
        return rows
    est = mc_overlap(m, M, cfg.replicates, [cfg.base_seed, m, M])
    emit("mean_P", est.mean)
    emit("stderr_P", est.stderr)
    if m - M <= EXACT_OVERLAP_MAX:
        emit("exact_T", exact_overlap(m, M))
    else:
        emit("exact_T", None, "too_large")
    emit("limit_T", limit_overlap(M / m))
    emit("poisson_limit_T", poisson_limit_overlap(M / m))
    return rows


_UNITS = {
    "overlap_curve": _overlap_unit,
    "barrier_curve": _pair_unit,
    "normalized_barrier": _pair_unit,
    "decay_slope": _pair_unit,
    "double_descent": lambda cfg, point, tag, train: double_descent_run(cfg, point),
    "pqi_vs_width": _single_unit,
    "pqi_vs_lr": _single_unit,
    "uniform_validation": _validation_unit,
}


def units(cfg: ExperimentConfig) -> list:
    if cfg.experiment == "pqi_vs_lr":
        return [(point, f"lr0={lr0:g}", cfg.train.replace(lr0=lr0))
                for lr0 in cfg.lr0_values for point in cfg.grid]
    return [(point, "", cfg.train) for point in cfg.grid]


def run_unit(cfg: ExperimentConfig, unit) -> list:
    point, tag, train = unit
    return _UNITS[cfg.experiment](cfg, point, tag, train)


def _run_unit_args(args):
    return run_unit(*args)


def collect(cfg: ExperimentConfig) -> list:
    """Run every unit and return the merged, ordered result rows."""
    work = [(cfg, u) for u in units(cfg)]
    if cfg.workers > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_unit_args, work))
    else:
        chunks = [run_unit(*w) for w in work]
    rows = [row for chunk in chunks for row in chunk]
    order = {u[1]: i for i, u in enumerate(units(cfg))}
    return sorted(rows, key=lambda r: (order[r.tag], r.m, r.M, r.d, r.replicate))


# ---------------------------------------------------------------- summaries

def summarize(rows) -> list:
    """Mean/stderr per (tag, m, M, d, metric), in first-seen order."""
    groups = defaultdict(list)
    nulls = defaultdict(int)
    for row in rows:
        key = (row.tag, row.m, row.M, row.d, row.metric)
        if row.value is None:
            nulls[key] += 1
            groups.setdefault(key, [])
        else:
            groups[key].append(row.value)
    out = []
    for key, values in groups.items():
        v = np.asarray(values, dtype=float)
        n = v.size
        out.append({
            "tag": key[0], "m": key[1], "M": key[2], "d": key[3], "metric": key[4],
            "n": n, "n_null": nulls[key],
            "mean": float(v.mean()) if n else None,
            "stderr": float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else None,
            "min": float(v.min()) if n else None,
            "max": float(v.max()) if n else None,
        })
    return out


def _means(rows, metric):
    table = {}
    for s in summarize(r for r in rows if r.metric == metric):
        table[(s["tag"], s["m"], s["M"], s["d"])] = s["mean"]
    return table


def normalized_barrier_summary(rows) -> list:
    """Barrier_permuted / Barrier_direct (ratio of means) per (M, d, m/M).

    A direct barrier below 1e-12 makes the ratio meaningless; such entries
    carry ``ratio=None`` and ``flag='direct_below_1e-12'``.
    """
    perm = _means(rows, "barrier_permuted")
    direct = _means(rows, "barrier_direct")
    table = []
    for key in sorted(perm, key=lambda k: (k[0], k[2], k[3], k[1])):
        tag, m, M, d = key
        p, q = perm[key], direct.get(key)
        if p is None or q is None:
            ratio, flag = None, "missing"
        elif q < NULL_DIRECT:
            ratio, flag = None, "direct_below_1e-12"
        else:
            ratio, flag = p / q, ""
        table.append({"tag": tag, "M": M, "d": d, "m": m, "m_over_M": m / M,
                      "mean_permuted": p, "mean_direct": q, "ratio": ratio, "flag": flag})
    return table


def _argext(table, pick):
    by = defaultdict(dict)
    for (tag, m, M, d), v in table.items():
        if v is not None:
            by[(tag, M, d)][m] = v
    return {k: pick(v, key=v.get) for k, v in by.items()}


def loglog_slope(ms, values) -> float:
    x, y = np.log(np.asarray(ms, float)), np.log(np.asarray(values, float))
    return float(np.polyfit(x, y, 1)[0])


def derived(cfg: ExperimentConfig, rows) -> list:
    """Experiment-specific headline quantities as (quantity, key, value, note) dicts."""
    out = []

    def add(quantity, tag, M, d, m, value, note=""):
        out.append({"quantity": quantity, "tag": tag, "M": M, "d": d, "m": m, "value": value, "note": note})

    exp = cfg.experiment
    if exp == "overlap_curve":
        for (tag, M, d), m in _argext(_means(rows, "mean_P"), min).items():
            add("argmin_mean_P", tag, M, d, m, float(m))
        for (tag, M, d), m in _argext(_means(rows, "exact_T"), min).items():
            add("argmin_exact_T", tag, M, d, m, float(m))
    elif exp in ("barrier_curve", "normalized_barrier", "double_descent", "decay_slope"):
        perm = _means(rows, "barrier_permuted")
        for (tag, M, d), m in _argext(perm, max).items():
            add("argmax_mean_barrier_permuted", tag, M, d, m, float(m))
        pairs = defaultdict(dict)
        for r in rows:
            if r.metric in ("barrier_permuted", "barrier_direct") and r.value is not None:
                pairs[(r.tag, r.m, r.M, r.d, r.replicate)][r.metric] = r.value
        worse = sum(1 for p in pairs.values()
                    if len(p) == 2 and p["barrier_permuted"] > p["barrier_direct"] + NULL_DIRECT)
        add("pairs_permuted_above_direct", "", None, None, None, float(worse))
        if exp == "normalized_barrier":
            for t in normalized_barrier_summary(rows):
                add("normalized_barrier", t["tag"], t["M"], t["d"], t["m"], t["ratio"], t["flag"])
        if exp == "decay_slope":
            by = defaultdict(list)
            for (tag, m, M, d), v in sorted(perm.items()):
                if v is not None and v > 0:
                    by[(tag, M, d)].append((m, v))
            for (tag, M, d), pts in by.items():
                if len(pts) >= 2:
                    ms, vs = zip(*pts)
                    add("loglog_slope_barrier_permuted", tag, M, d, None, loglog_slope(ms, vs))
    elif exp in ("pqi_vs_width", "pqi_vs_lr"):
        frac = defaultdict(list)
        div = defaultdict(list)
        for r in rows:
            if r.metric == "zero_rows" and r.value is not None:
                frac[(r.tag, r.m, r.M, r.d)].append(r.value > 0)
            if r.metric == "diverged":
                div[(r.tag, r.m, r.M, r.d)].append(r.value)
        for (tag, m, M, d), flags in div.items():
            add("fraction_diverged", tag, M, d, m, float(np.mean(flags)))
            if (tag, m, M, d) in frac:
                add("fraction_with_zero_rows", tag, M, d, m, float(np.mean(frac[(tag, m, M, d)])),
                    "among runs that did not diverge")
            else:
                add("fraction_with_zero_rows", tag, M, d, m, None, "no run finished")
    elif exp == "uniform_validation":
        out.extend(_validation_derived(cfg, rows))
    return out


def _validation_derived(cfg, rows) -> list:
    out = []
    per_run = defaultdict(dict)
    for r in rows:
        per_run[(r.m, r.M, r.d, r.replicate)][r.metric] = r.value
    points = sorted({k[:3] for k in per_run})
    for m, M, d in points:
        runs = [v for k, v in per_run.items() if k[:3] == (m, M, d)]
        patterns = defaultdict(int)
        for v in runs:
            alpha = [v.get(f"alpha_{j}") for j in range(1, M + 1)]
            if None in alpha:
                patterns["null"] += 1
            else:
                patterns["(" + ",".join(str(int(a)) for a in alpha) + ")"] += 1
        for pattern in sorted(patterns):
            out.append({"quantity": "type_vector_count", "tag": pattern, "M": M, "d": d, "m": m,
                        "value": float(patterns[pattern]), "note": ""})
        if M == 1:
            # reference: sorted uniform-simplex points from an independent Dirichlet stream
            ref = np.sort(np.random.default_rng([cfg.base_seed, m, 99]).dirichlet(np.ones(m), 20_000), axis=1)[:, ::-1]
            for k in range(1, m + 1):
                vals = [v[f"value_rank_{k}"] for v in runs if v.get(f"value_rank_{k}") is not None]
                if len(vals) >= 2:
                    p = float(stats.ks_2samp(vals, ref[:, k - 1]).pvalue)
                    out.append({"quantity": "ks_pvalue_value_rank", "tag": str(k), "M": M, "d": d, "m": m,
                                "value": p, "note": ""})
    return out


# ------------------------------------------------------------------ writing

SCHEMA_VERSION = 1
RESULT_COLUMNS = ResultRow._fields
SUMMARY_COLUMNS = ("tag", "m", "M", "d", "metric", "n", "n_null", "mean", "stderr", "min", "max")
DERIVED_COLUMNS = ("quantity", "tag", "M", "d", "m", "value", "note")


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, columns, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            get = rec._asdict() if hasattr(rec, "_asdict") else rec
            writer.writerow([format_value(get[c]) for c in columns])


_PLOT_TEMPLATE = '''"""Plot {experiment} from summary.csv (requires matplotlib)."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
series = defaultdict(list)
with open(here / "summary.csv") as fh:
    for row in csv.DictReader(fh):
        if row["metric"] in {metrics!r} and row["mean"]:
            label = " ".join(x for x in (row["metric"], row["tag"], "M=" + row["M"], "d=" + row["d"]) if x)
            series[label].append((int(row["m"]), float(row["mean"])))
fig, ax = plt.subplots()
for label, pts in sorted(series.items()):
    pts.sort()
    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
ax.set_xlabel("m")
ax.set_ylabel({ylabel!r})
{scale}ax.legend(fontsize="small")
fig.savefig(here / "{experiment}.png", dpi=150)
if "--show" in sys.argv:
    plt.show()
'''

_PLOT_METRICS = {
    "overlap_curve": (("mean_P", "exact_T", "limit_T", "poisson_limit_T"), "overlap proportion", False),
    "barrier_curve": (("barrier_permuted", "barrier_direct"), "barrier", True),
    "normalized_barrier": (("barrier_permuted", "barrier_direct"), "barrier", True),
    "double_descent": (("barrier_permuted", "barrier_direct"), "barrier", True),
    "decay_slope": (("barrier_permuted",), "barrier", True),
    "pqi_vs_width": (("pq_by_row", "pq_flat"), "PQ index", False),
    "pqi_vs_lr": (("pq_by_row", "pq_flat"), "PQ index", False),
    "uniform_validation": (("offtype_residual",), "off-type residual", True),
}


def plot_script(experiment: str) -> str:
    metrics, ylabel, logy = _PLOT_METRICS[experiment]
    scale = 'ax.set_yscale("log")\n' if logy else ""
    if experiment == "decay_slope":
        scale += 'ax.set_xscale("log")\n'
    return _PLOT_TEMPLATE.format(experiment=experiment, metrics=list(metrics), ylabel=ylabel, scale=scale)


def assumptions(cfg: ExperimentConfig) -> list:
    """Human-readable statement of the choices baked into this run."""
    notes = [f"replicate r uses seed base_seed + r = {cfg.base_seed} + r"]
    if cfg.experiment == "overlap_curve":
        notes = [f"all draws at a grid point come from one stream seeded by [{cfg.base_seed}, m, M]; "
                 "rows are aggregates (replicate = -1)"]
    elif cfg.experiment in ("barrier_curve", "normalized_barrier", "double_descent", "decay_slope"):
        notes.append("pair endpoints use seeds [s, 0] and [s, 1]")
        notes.append(f"barrier evaluated at {cfg.grid_points} evenly spaced interpolation points")
    if cfg.solution_source == "uniform":
        notes.append("uniform manifold samples are aligned by exact neuron type")
    else:
        t = cfg.train
        notes.append(f"training: {cfg.solution_source.upper()}, lr0={t.lr0:g}, schedule={t.lr_schedule}, "
                     f"max_iters={t.max_iters}, loss_tol={t.tol:g}, init_std={'1/(m d)' if t.init_std is None else t.init_std}")
        notes.append(f"trained neurons are typed by their dominant positive teacher coordinate; "
                     f"rows with norm <= {cfg.zero_tol:g} count as zero rows")
        notes.append("over-realized runs that stop above loss_tol are reported as null with note 'not_converged'")
    if cfg.experiment == "pqi_vs_lr":
        notes.append("lr0 swept over " + ", ".join(f"{v:g}" for v in cfg.lr0_values) + " (overrides the lr0 above)")
    if cfg.experiment in ("pqi_vs_width", "pqi_vs_lr"):
        notes.append(f"PQ index with p={cfg.pq.p:g}, q={cfg.pq.q:g}")
    return notes


class RunOutput(NamedTuple):
    rows: list
    summary: list
    derived: list
    directory: Path


def run(cfg: ExperimentConfig, output_dir=None) -> RunOutput:
    """Run an experiment and write results.csv, summary.csv, derived.csv,
    manifest.json and a plot script into ``output_dir`` (default: the config's).

    CSV contents are a pure function of the config; only the manifest's
    ``wall_time_s`` varies between identical runs.
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rows = collect(cfg)
    summary = summarize(rows)
    extra = derived(cfg, rows)
    write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    write_csv(out / "derived.csv", DERIVED_COLUMNS, extra)
    (out / f"plot_{cfg.experiment}.py").write_text(plot_script(cfg.experiment))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "result_columns": list(RESULT_COLUMNS),
        "config": cfg.to_dict(),
        "units": len(units(cfg)),
        "rows": len(rows),
        "null_rows": sum(r.value is None for r in rows),
        "assumptions": assumptions(cfg),
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunOutput(rows, summary, extra, out)
