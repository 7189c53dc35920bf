"""Command-line entry point ``geostat-uq``.

Subcommands::

    geostat-uq run      --config exp.toml [--out DIR] [--seed N]
    geostat-uq spectrum --config exp.toml [--out DIR] [--workers N]
    geostat-uq designs  --config exp.toml [--out DIR] [--workers N]
    geostat-uq oracle   --config exp.toml

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .experiments import (build_instance, format_table, misfit_hessian, run_design_comparison,
                          run_experiment, run_spectrum_study, solve_map)
from .krylov import ConvergenceError
from .oracle import MAX_ORACLE_M, compare_posterior
from .posterior import PosteriorError
from .prior import EmbeddingError, PriorOperator
from .randeig import GhepProblem, randomized_ghep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
ORACLE_TOL = 1e-6

NUMERICAL_ERRORS = (ConvergenceError, PosteriorError, EmbeddingError, np.linalg.LinAlgError,
                    FloatingPointError)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geostat-uq",
                                description="Low-rank posterior uncertainty experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "single experiment"),
                       ("spectrum", "eigenvalue sweep over nu, grid size or measurements"),
                       ("designs", "compare uncertainty criteria across designs"),
                       ("oracle", "check the low-rank posterior against dense algebra")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="TOML experiment file")
        sp.add_argument("--out", help="output directory (overrides [run] out)")
        sp.add_argument("--seed", type=int, help="override every seed (truth, noise, eigen, ...)")
        sp.add_argument("--workers", type=int, help="concurrent sweep points")
    return p


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    raw = cfg.resolved()
    if args.seed is not None:
        raw["truth"]["seed"] = args.seed
        raw["noise"]["seed"] = args.seed + 1
        raw["eigen"]["seed"] = args.seed
        raw["criteria"]["seed"] = args.seed
    if args.out:
        raw["run"]["out"] = args.out
    if args.workers is not None:
        raw["run"]["workers"] = args.workers
    return from_dict(raw)


def run_oracle(cfg: ExperimentConfig) -> dict:
    """Dense check at the MAP point of a small configured instance."""
    if cfg.m > MAX_ORACLE_M:
        raise ConfigError(f"oracle needs m <= {MAX_ORACLE_M}, config has m = {cfg.m}")
    inst = build_instance(cfg)
    prior = PriorOperator(inst.grid, inst.prior.kernel, mode="dense")
    s_hat = solve_map(cfg, inst).s_hat
    J = inst.model.H if inst.model.is_linear else inst.model.jacobian(s_hat)
    Jd = J.toarray() if hasattr(J, "toarray") else J @ np.eye(cfg.m)
    hred = Jd.T @ Jd / inst.noise_var
    n = hred.shape[0]
    k = min(Jd.shape[0], n - cfg["eigen"]["p"])
    if k < 1:
        raise ConfigError("oracle instance too small for the configured oversampling")
    eigs = randomized_ghep(GhepProblem(misfit_hessian(J, inst.noise_var), prior, k,
                                       cfg["eigen"]["p"], cfg["eigen"]["seed"]))
    return compare_posterior(prior, eigs, inst.X, hred)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "run":
            man = run_experiment(cfg)
            print(f"relative error {man.summary['relative_error']:.4f}, "
                  f"{man.summary['retained_modes']} modes retained -> {cfg['run']['out']}")
        elif args.command == "spectrum":
            man = run_spectrum_study(cfg)
            print(f"{man.summary['kind']} sweep, counts above cutoff: {man.summary['counts']}")
        elif args.command == "designs":
            man = run_design_comparison(cfg)
            print(format_table(man.summary["criteria"]))
        else:
            errors = run_oracle(cfg)
            for key, val in errors.items():
                print(f"{key:10s} {val:.3e}  {'ok' if val <= ORACLE_TOL else 'FAIL'}")
            if max(errors.values()) > ORACLE_TOL:
                return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
