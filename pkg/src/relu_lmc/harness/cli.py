"""``relu-lmc`` command-line interface.

Exit codes: 0 success, 1 usage error (bad arguments, unreadable input,
invalid config), 2 numerical failure (divergence, classification failure,
kernel domain error, undefined index).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..align import (
    barrier,
    barrier_modulo_permutation,
    best_permutation,
    expected_overlap,
    limit_overlap,
    mc_overlap,
    poisson_limit_overlap,
    save_match_report,
    save_profile,
)
from ..kernel import KernelDomainError, ProblemConfig, kappa, kappa_prime, mc_loss, population_loss
from ..manifold import (
    CLASSIFY_TOL,
    ClassificationError,
    UnsupportedRegimeError,
    classify,
    classify_dominant,
    is_global_min,
    load_weights,
    sample_uniform,
    save_weights,
)
from ..sparsity import PQParams, ZeroVectorError, pq_by_row, pq_flat, zero_rows
from ..train import TrainConfig, TrainingDivergedError, save_trace, train
from . import config as config_mod
from .experiments import format_value, run

EXIT_USAGE = 1
EXIT_NUMERIC = 2
NUMERIC_ERRORS = (TrainingDivergedError, ClassificationError, KernelDomainError, ZeroVectorError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(args, pairs) -> None:
    if args.format == "csv":
        print("key,value")
        for k, v in pairs:
            print(f"{k},{format_value(v)}")
    else:
        width = max(len(k) for k, _ in pairs)
        for k, v in pairs:
            text = repr(float(v)) if isinstance(v, (float, np.floating)) else format_value(v)
            print(f"{k:<{width}}  {text}")


def _weights(path, M: int):
    try:
        W = load_weights(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise UsageError(f"{path}: not a numeric CSV matrix ({exc})") from exc
    m, d = W.shape
    try:
        return W, ProblemConfig(m, M, d)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _problem(args) -> ProblemConfig:
    try:
        return ProblemConfig(args.m, args.M, args.d)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _matrix_out(args, W) -> None:
    if args.out:
        save_weights(args.out, W)
    else:
        np.savetxt(sys.stdout, W, delimiter=",", fmt="%.17g")


# ----------------------------------------------------------------- commands

def cmd_kappa(args):
    _emit(args, [("t", args.t), ("d", args.d),
                 ("kappa", float(kappa(args.t, args.d))), ("kappa_prime", float(kappa_prime(args.t, args.d)))])


def cmd_loss(args):
    W, cfg = _weights(args.weights, args.M)
    pairs = [("m", cfg.m), ("M", cfg.M), ("d", cfg.d), ("loss", population_loss(W, cfg))]
    if args.mc:
        est = mc_loss(W, cfg, args.mc, args.seed)
        pairs += [("mc_loss", est.mean), ("mc_stderr", est.stderr), ("mc_samples", est.n_samples)]
    _emit(args, pairs)


def cmd_train(args):
    cfg = _problem(args)
    try:
        tc = TrainConfig(mode=args.mode, lr0=args.lr0, lr_schedule=args.schedule, batch=args.batch,
                         max_iters=args.max_iters, loss_tol=args.tol, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    result = train(cfg, tc)
    if args.trace:
        save_trace(args.trace, result)
    if args.out:
        save_weights(args.out, result.weights)
    _emit(args, [("final_loss", result.final_loss), ("iterations", result.iterations),
                 ("converged", result.converged), ("seed", args.seed)])
    if not args.out:
        np.savetxt(sys.stdout, result.weights, delimiter=",", fmt="%.17g")


def cmd_sample(args):
    cfg = _problem(args)
    try:
        W = sample_uniform(cfg, args.seed)
    except UnsupportedRegimeError as exc:
        raise UsageError(str(exc)) from exc
    _matrix_out(args, W)


def cmd_classify(args):
    W, cfg = _weights(args.weights, args.M)
    if args.dominant:
        cls = classify_dominant(W, cfg, args.tol)
    else:
        cls = classify(W, cfg, args.tol)
    _emit(args, [("labels", " ".join(map(str, cls.labels))), ("alpha", " ".join(map(str, cls.alpha))),
                 ("residual", cls.residual), ("global_min", is_global_min(W, cfg, args.tol))])


def cmd_permute(args):
    W1, cfg = _weights(args.w1, args.M)
    W2, cfg2 = _weights(args.w2, args.M)
    if cfg != cfg2:
        raise UsageError(f"shape mismatch: {W1.shape} vs {W2.shape}")
    perm, report = best_permutation(W1, W2, cfg, args.tol, strict=not args.dominant)
    _emit(args, [("perm", " ".join(map(str, perm))), ("overlap_C", report.overlap_C),
                 ("proportion_P", report.proportion_P)])
    if args.out:
        save_weights(args.out, W2[perm])
    if args.report:
        save_match_report(args.report, report)


def cmd_barrier(args):
    W1, cfg = _weights(args.w1, args.M)
    W2, cfg2 = _weights(args.w2, args.M)
    if cfg != cfg2:
        raise UsageError(f"shape mismatch: {W1.shape} vs {W2.shape}")
    direct = barrier(W1, W2, cfg, args.grid)
    pairs = [("barrier_direct", direct.barrier)]
    profile = direct
    if not args.no_permute:
        profile, report = barrier_modulo_permutation(W1, W2, cfg, args.grid, args.tol, strict=not args.dominant)
        pairs += [("barrier_permuted", profile.barrier), ("proportion_P", report.proportion_P)]
    if args.profile:
        save_profile(args.profile, profile)
    _emit(args, pairs)


def cmd_overlap(args):
    if args.m < args.M or args.M < 1:
        raise UsageError("overlap needs m >= M >= 1")
    pairs = [("m", args.m), ("M", args.M), ("method", args.method)]
    if args.method == "exact":
        pairs.append(("expected_P", expected_overlap(args.m, args.M)))
    else:
        est = mc_overlap(args.m, args.M, args.n, args.seed)
        pairs += [("expected_P", est.mean), ("stderr", est.stderr), ("samples", est.n_samples)]
    t = args.M / args.m
    pairs += [("gaussian_approx_P", limit_overlap(t)), ("poisson_limit_P", poisson_limit_overlap(t))]
    _emit(args, pairs)


def cmd_pqi(args):
    try:
        W = load_weights(args.weights)
        params = PQParams(args.p, args.q)
    except OSError as exc:
        raise UsageError(f"cannot read {args.weights}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(args, [("pq_by_row", pq_by_row(W, params)), ("pq_flat", pq_flat(W, params)),
                 ("zero_rows", zero_rows(W, args.tol))])


def cmd_experiment(args):
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg = _replace(cfg, base_seed=args.seed)
        if args.workers is not None:
            cfg = _replace(cfg, workers=args.workers)
        if args.grid is not None:
            cfg = _replace(cfg, grid=_parse_grid(args.grid))
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
    except config_mod.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    result = run(cfg, args.out)
    print(f"wrote {len(result.rows)} rows to {result.directory}")
    for item in result.derived:
        if not item["quantity"].startswith("type_vector") and not item["quantity"].startswith("ks_"):
            where = " ".join(f"{k}={item[k]}" for k in ("tag", "M", "d", "m") if item[k] not in ("", None))
            print(f"  {item['quantity']} {where}: {format_value(item['value'])} {item['note']}".rstrip())


def _replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)


def _parse_grid(text: str) -> tuple:
    """``m,M,d;m,M,d;...`` explicit points."""
    try:
        points = [tuple(int(x) for x in part.split(",")) for part in text.split(";") if part.strip()]
    except ValueError:
        raise UsageError(f"--grid expects 'm,M,d;m,M,d', got {text!r}") from None
    return config_mod.expand_grid({"points": [list(p) for p in points]})


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relu-lmc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--format", choices=("text", "csv"), default="text")
        p.set_defaults(func=func)
        return p

    def shape(p, need_m=True):
        if need_m:
            p.add_argument("--m", type=int, required=True)
        p.add_argument("--M", type=int, required=True)
        p.add_argument("--d", type=int, required=True)

    p = add("kappa", cmd_kappa, "evaluate the kernel and its derivative")
    p.add_argument("t", type=float)
    p.add_argument("--d", type=int, required=True)

    p = add("loss", cmd_loss, "exact population loss of a weight CSV")
    p.add_argument("weights")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--mc", type=int, default=0, metavar="N", help="also estimate by Monte Carlo with N samples")
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "train a student by GD or online SGD")
    shape(p)
    p.add_argument("--mode", choices=("GD", "SGD"), default="GD")
    p.add_argument("--lr0", type=float, default=2.0)
    p.add_argument("--schedule", choices=("width", "constant"), default="width")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--max-iters", type=int, default=200_000)
    p.add_argument("--tol", type=float, default=None, help="loss tolerance (default 1e-10 GD, 1e-6 SGD)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="weights CSV (default: print to stdout)")
    p.add_argument("--trace", help="loss trace CSV")

    p = add("sample", cmd_sample, "draw a uniform point of the global-minimum manifold")
    shape(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = add("classify", cmd_classify, "neuron types and type vector of a solution")
    p.add_argument("weights")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--tol", type=float, default=CLASSIFY_TOL)
    p.add_argument("--dominant", action="store_true", help="label by dominant teacher coordinate (trained solutions)")

    for name, func, help_ in (("permute", cmd_permute, "align the neurons of W2 to W1"),
                              ("barrier", cmd_barrier, "loss barrier on the straight path W1 -> W2")):
        p = add(name, func, help_)
        p.add_argument("w1")
        p.add_argument("w2")
        p.add_argument("--M", type=int, required=True)
        p.add_argument("--tol", type=float, default=CLASSIFY_TOL)
        p.add_argument("--dominant", action="store_true")
        if name == "permute":
            p.add_argument("--out", help="write the permuted W2 here")
            p.add_argument("--report", help="write the per-type match report CSV here")
        else:
            p.add_argument("--profile", help="write the (lambda, loss) profile CSV here (permuted unless --no-permute)")
            p.add_argument("--grid", type=int, default=11, help="number of interpolation points")
            p.add_argument("--no-permute", action="store_true")

    p = add("overlap", cmd_overlap, "expected overlap proportion of two uniform solutions")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--method", choices=("exact", "monte_carlo"), default="exact")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = add("pqi", cmd_pqi, "PQ sparsity indices of a weight CSV")
    p.add_argument("weights")
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6, help="zero-row norm tolerance")

    p = sub.add_parser("experiment", help="run a configured sweep")
    esub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    r = esub.add_parser("run", help="run an experiment config (TOML)")
    r.add_argument("config")
    r.add_argument("--out", type=Path, help="override output_dir")
    r.add_argument("--seed", type=int, help="override base_seed")
    r.add_argument("--grid", help="override the grid with explicit points 'm,M,d;...'")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"relu-lmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"relu-lmc: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"relu-lmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
