"""Command-line harness.

Subcommands: gen, fit, lr, select, limit, check-h4, gradcheck, experiment.
Exit codes: 0 success, 2 configuration errors, 3 fit failures, 4
limit-simulation failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .estimation import FitConfig, fit_mle
from .harness import (
    ExperimentConfig,
    gradcheck,
    run_experiment,
    summarize,
)
from .likelihood import conditional_loglik, lr_statistic
from .limit_law import (
    ConeOptSettings,
    check_h4,
    extended_grid,
    gram_matrix,
    gram_matrix_gh,
    save_gram,
    simulate_limit,
    ScoreBasis,
)
from .model import ConstraintBox, Dataset, RegressionSpec, generate_dataset, stable_hash
from .selection import PenaltySchedule, select_architecture

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_LIMIT = 4


class ConfigError(Exception):
    pass


class FitError(Exception):
    pass


class LimitError(Exception):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _load_spec(path: str) -> RegressionSpec:
    try:
        return RegressionSpec.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid spec {path}: {exc}") from exc


def _load_box(path: str) -> ConstraintBox:
    try:
        return ConstraintBox.from_dict(_load_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid box {path}: {exc}") from exc


def _load_fit_config(path: str | None, seed: int | None) -> FitConfig:
    cfg = FitConfig() if path is None else FitConfig.from_dict(_load_json(path))
    if seed is not None:
        cfg.seed = seed
    return cfg


def _out_path(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = _load_spec(args.spec)
    seed = args.seed if args.seed is not None else 0
    data = generate_dataset(spec, args.n, seed)
    tag = stable_hash({"spec": spec.to_dict(), "n": args.n, "seed": seed})
    data.to_csv(_out_path(args, args.out), header_comment=f"config_hash={tag} seed={seed}")
    print(f"wrote {args.out}: n={data.n}, d={data.d}")
    return EXIT_OK


def _sigma2_for(args) -> float:
    if args.spec is not None:
        return _load_spec(args.spec).sigma2
    return args.sigma2


def cmd_fit(args) -> int:
    box = _load_box(args.box)
    cfg = _load_fit_config(args.fit_config, args.seed)
    data = Dataset.from_csv(args.data, sigma2=_sigma2_for(args))
    try:
        result = fit_mle(data, args.k, box, cfg)
    except Exception as exc:
        raise FitError(str(exc)) from exc
    payload = result.to_dict()
    payload["config_hash"] = stable_hash({"box": box.to_dict(), "fit": cfg.to_dict(), "k": args.k})
    payload["seed"] = cfg.seed
    _write_json(_out_path(args, args.out), payload)
    print(f"k={args.k}: loglik={result.loglik:.6f} converged={result.converged}")
    return EXIT_OK


def cmd_lr(args) -> int:
    spec = _load_spec(args.spec)
    box = _load_box(args.box)
    cfg = _load_fit_config(args.fit_config, args.seed)
    data = Dataset.from_csv(args.data, sigma2=spec.sigma2)
    try:
        result = fit_mle(data, args.k, box, cfg)
        stat = lr_statistic(result.loglik, spec, data)
    except Exception as exc:
        raise FitError(str(exc)) from exc
    payload = {
        "k": args.k,
        "lr": stat,
        "sup_loglik": result.loglik,
        "true_loglik": conditional_loglik(spec.theta0, data),
        "converged": result.converged,
        "config_hash": stable_hash({"spec": spec.to_dict(), "box": box.to_dict(), "k": args.k}),
        "seed": cfg.seed,
    }
    _write_json(_out_path(args, args.out), payload)
    print(f"2*lambda_n(k={args.k}) = {stat:.6f}")
    return EXIT_OK


def cmd_select(args) -> int:
    spec = _load_spec(args.spec)
    box = _load_box(args.box)
    cfg = _load_fit_config(args.fit_config, args.seed)
    if args.schedule is not None:
        schedule = PenaltySchedule.from_dict(_load_json(args.schedule))
    else:
        schedule = PenaltySchedule("bic_like", input_dim=spec.input_dim)
    data = Dataset.from_csv(args.data, sigma2=spec.sigma2)
    try:
        report = select_architecture(data, args.k_max, box, cfg, schedule)
    except Exception as exc:
        raise FitError(str(exc)) from exc
    payload = report.to_dict()
    payload["config_hash"] = stable_hash(
        {"spec": spec.to_dict(), "box": box.to_dict(), "schedule": schedule.to_dict(), "k_max": args.k_max}
    )
    payload["seed"] = cfg.seed
    _write_json(_out_path(args, args.out), payload)
    print(f"k_hat = {report.k_hat} (k_max={args.k_max}, n={report.n})")
    return EXIT_OK


def _build_gram(spec: RegressionSpec, args, basis: ScoreBasis | None = None):
    mode = args.gram_mode
    if mode == "auto":
        mode = "gh" if (spec.input_dim == 1 and spec.input_law == "standard_normal") else "mc"
    if mode == "gh":
        return gram_matrix_gh(spec, basis=basis)
    seed = args.seed if args.seed is not None else 12345
    return gram_matrix(spec, args.gram_draws, seed, basis=basis)


def cmd_limit(args) -> int:
    spec = _load_spec(args.spec)
    seed = args.seed if args.seed is not None else 0
    basis = None
    if args.extended_index_set:
        box = _load_box(args.box) if args.box else ConstraintBox(0.1, 50.0)
        basis = ScoreBasis(spec.k0, spec.input_dim, extended_grid(box, spec.input_dim))
    try:
        gram = _build_gram(spec, args, basis)
        sample = simulate_limit(
            spec, args.k, gram, args.draws, seed,
            ConeOptSettings(), extended=args.extended_index_set,
        )
    except Exception as exc:
        raise LimitError(str(exc)) from exc
    tag = stable_hash({"spec": spec.to_dict(), "k": args.k, "draws": args.draws, "seed": seed})
    sample.to_csv(_out_path(args, args.out), header_comment=f"config_hash={tag} seed={seed}")
    stats = summarize(sample.values)
    print(
        f"limit sample k={args.k}: mean={stats.mean:.4f} "
        f"q95={stats.q95:.4f} draws={stats.count}"
    )
    return EXIT_OK


def cmd_check_h4(args) -> int:
    spec = _load_spec(args.spec)
    seed = args.seed if args.seed is not None else 12345
    reports = {}
    modes = ["mc", "gh"] if args.mode == "both" else [args.mode]
    try:
        for mode in modes:
            if mode == "gh":
                gram = gram_matrix_gh(spec)
            else:
                gram = gram_matrix(spec, args.gram_draws, seed)
            rep = check_h4(gram, tol=args.tol)
            reports[mode] = {
                "min_eigenvalue": rep.min_eigenvalue,
                "raw_min_eigenvalue": rep.raw_min_eigenvalue,
                "passed": rep.passed,
                "tol": rep.tol,
            }
            if args.save_gram:
                save_gram(gram, _out_path(args, f"gram_{mode}"), spec)
    except Exception as exc:
        raise LimitError(str(exc)) from exc
    payload = {
        "config_hash": stable_hash(spec.to_dict()),
        "seed": seed,
        "reports": reports,
    }
    _write_json(_out_path(args, args.out), payload)
    for mode, rep in reports.items():
        print(
            f"[{mode}] min eigenvalue (scaled) = {rep['min_eigenvalue']:.3e} "
            f"(raw {rep['raw_min_eigenvalue']:.3e}) -> {'PASS' if rep['passed'] else 'FAIL'}"
        )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = _load_spec(args.spec)
    k = args.k if args.k is not None else spec.k0 + 1
    seed = args.seed if args.seed is not None else 0
    report = gradcheck(spec, k, n_draws=args.draws, seed=seed)
    report["config_hash"] = stable_hash(spec.to_dict())
    report["seed"] = seed
    _write_json(_out_path(args, args.out), report)
    print(
        f"gradcheck k={k} over {args.draws} draws: "
        f"max rel err first={report['max_rel_error_first']:.3e} "
        f"second={report['max_rel_error_second']:.3e}"
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        config = ExperimentConfig.from_dict(_load_json(args.config))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc
    if args.seed is not None:
        config.base_seed = args.seed
    try:
        summary = run_experiment(config, args.out_dir, threads=args.threads)
    except Exception as exc:
        raise LimitError(str(exc)) if "limit" in str(exc).lower() else FitError(str(exc))
    failed = summary["failed_cells"]
    print(f"experiment done: {failed} failed cells; outputs in {args.out_dir}")
    return EXIT_OK if failed == 0 else EXIT_FIT


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
    common.add_argument("--out-dir", default=".", help="directory for output files")

    parser = argparse.ArgumentParser(prog="mlplr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="draw a dataset from a true-model spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default="data.csv")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("fit", parents=[common], help="constrained MLE at one width")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--box", required=True)
    p.add_argument("--fit-config", default=None)
    p.add_argument("--spec", default=None, help="spec JSON supplying sigma2")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--out", default="fit.json")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("lr", parents=[common], help="doubled LR statistic against the true model")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--box", required=True)
    p.add_argument("--fit-config", default=None)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", default="lr.json")
    p.set_defaults(fn=cmd_lr)

    p = sub.add_parser("select", parents=[common], help="penalized width selection")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--box", required=True)
    p.add_argument("--fit-config", default=None)
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--schedule", default=None, help="schedule JSON (default: BIC-like)")
    p.add_argument("--out", default="select.json")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("limit", parents=[common], help="simulate the limiting LR distribution")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--gram-mode", choices=("auto", "mc", "gh"), default="auto")
    p.add_argument("--gram-draws", type=int, default=200_000)
    p.add_argument("--extended-index-set", action="store_true",
                   help="include free-unit phi terms on a weight grid")
    p.add_argument("--box", default=None, help="box JSON bounding the extended weight grid")
    p.add_argument("--out", default="limit.csv")
    p.set_defaults(fn=cmd_limit)

    p = sub.add_parser("check-h4", parents=[common], help="linear-independence certificate")
    p.add_argument("--spec", required=True)
    p.add_argument("--mode", choices=("both", "mc", "gh"), default="both")
    p.add_argument("--gram-draws", type=int, default=200_000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--save-gram", action="store_true")
    p.add_argument("--out", default="h4.json")
    p.set_defaults(fn=cmd_check_h4)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference derivative check")
    p.add_argument("--spec", required=True)
    p.add_argument("--k", type=int, default=None, help="fitted width (default k0+1)")
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--out", default="gradcheck.json")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("experiment", parents=[common], help="replicated LR/selection experiment")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except LimitError as exc:
        print(f"limit-simulation failure: {exc}", file=sys.stderr)
        return EXIT_LIMIT


if __name__ == "__main__":
    sys.exit(main())
