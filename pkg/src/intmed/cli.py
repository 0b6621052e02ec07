"""Command-line entry point: ``intmed {simulate,estimate,grid,oracle,verify}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .core import Contrast, Dataset, MediationError
from .dgp import DgpSpec, sample_dataset
from .effects import decompose_effects
from .estimators import ESTIMATORS, estimate
from .harness import (
    DEFAULT_REPS,
    DEFAULT_SIZES,
    GRID_ESTIMATORS,
    QUICK_REPS,
    QUICK_SIZES,
    ScenarioSpec,
    default_jobs,
    load_config,
    oracle_report,
    run_grid,
    verify_identities,
)
from .learners import SCENARIOS, NuisanceConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _contrast(text: str) -> Contrast:
    try:
        a_prime, a_star = (int(x) for x in text.split(","))
        return Contrast(a_prime, a_star)
    except Exception as exc:
        raise argparse.ArgumentTypeError(f"expected 'a_prime,a_star', got {text!r}") from exc


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_simulate(args) -> int:
    data = sample_dataset(DgpSpec(), args.n or 1000, args.seed)
    _write(data.to_csv(), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.data:
        data = Dataset.from_csv(Path(args.data))
    else:
        data = sample_dataset(DgpSpec(), args.n or 1000, args.seed)
    cfg = NuisanceConfig.scenario(args.scenario or "all_consistent", folds=args.folds)
    kind = args.estimator[0] if args.estimator else "onestep"
    if args.effects:
        doc = decompose_effects(data, cfg, kind, args.seed).to_dict()
    else:
        doc = estimate(kind, data, cfg, args.contrast, args.seed).to_dict()
    _write(json.dumps(doc, indent=2, sort_keys=True), args.out)
    return EXIT_OK


def _grid_specs(args) -> List[ScenarioSpec]:
    if args.config:
        return load_config(args.config)
    names = args.scenario or ["all_consistent"]
    if names == ["all"]:
        names = list(SCENARIOS)
    sizes = tuple(args.n) if args.n else (QUICK_SIZES if args.quick else DEFAULT_SIZES)
    reps = args.reps or (QUICK_REPS if args.quick else DEFAULT_REPS)
    ests = tuple(args.estimator) if args.estimator else GRID_ESTIMATORS
    return [
        ScenarioSpec(name=s, sample_sizes=sizes, replications=reps, estimators=ests,
                     base_seed=args.seed, folds=args.folds)
        for s in names
    ]


def cmd_grid(args) -> int:
    specs = _grid_specs(args)
    result = run_grid(specs, args.out or "grid_out", jobs=args.jobs)
    for m in result.summary:
        print(
            f"{m.scenario:<16} {m.estimator:<19} {m.effect:<11} n={m.n:<5} "
            f"sqrt(n)|bias|={m.sqrt_n_abs_bias:7.4f}  nMSE/bound={m.n_mse_over_bound:7.4f}  "
            f"cov95={m.coverage95:.3f}  cov99={m.coverage99:.3f}"
        )
    if result.n_errors:
        print(f"{result.n_errors} replication rows recorded errors", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_oracle(args) -> int:
    rep = oracle_report(args.contrast)
    if args.out:
        Path(args.out).write_text(rep.to_csv())
    print(rep.to_text())
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = verify_identities(corrupt_c=args.corrupt_c)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} identities hold")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intmed", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output file or directory")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = common(sub.add_parser("simulate", help="draw a dataset and write it as CSV"))
    sp.add_argument("--n", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("estimate", help="estimate on one dataset, print JSON"))
    sp.add_argument("--data", help="CSV produced by 'simulate' (default: simulate one)")
    sp.add_argument("--n", type=int)
    sp.add_argument("--scenario", choices=SCENARIOS)
    sp.add_argument("--estimator", action="append", choices=ESTIMATORS)
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--contrast", type=_contrast, default=Contrast(1, 0))
    sp.add_argument("--effects", action="store_true", help="report indirect/direct/total effects")
    sp.set_defaults(func=cmd_estimate)

    sp = common(sub.add_parser("grid", help="Monte Carlo grid over scenarios and sample sizes"))
    sp.add_argument("--config", help="JSON ScenarioSpec (or list of them)")
    sp.add_argument("--scenario", action="append", choices=SCENARIOS + ("all",))
    sp.add_argument("--n", type=int, action="append")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--estimator", action="append", choices=GRID_ESTIMATORS)
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--jobs", type=int, default=default_jobs())
    sp.add_argument("--quick", action="store_true", help=f"n in {QUICK_SIZES}, {QUICK_REPS} reps")
    sp.set_defaults(func=cmd_grid)

    sp = common(sub.add_parser("oracle", help="print exact truths"))
    sp.add_argument("--contrast", type=_contrast)
    sp.set_defaults(func=cmd_oracle)

    sp = common(sub.add_parser("verify", help="run the exact identity suite"))
    sp.add_argument("--corrupt-c", action="store_true", help="invert the mediator ratio (mutation check)")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (MediationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
