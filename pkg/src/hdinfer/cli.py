"""Command line interface: ``hdinfer {simulate,fit,diagnose}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from .app import (
    METHODS,
    DiagnoseConfig,
    FitConfig,
    load_config,
    run_diagnose,
    run_fit,
    run_simulate,
)
from .exceptions import ConfigError, DataError, HDInferError, NumericalError
from .simulation import SimulationConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _parser():
    parser = argparse.ArgumentParser(
        prog="hdinfer", description="Debiased inference for p > n linear regression.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False, alpha=True):
        p.add_argument("--config", type=Path, required=config_required,
                       help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out-dir", type=Path, default=Path("hdinfer-out"),
                       help="directory receiving the outputs (default: %(default)s)")
        p.add_argument("--method", choices=METHODS, help="override the approximate inverse")
        if alpha:
            p.add_argument("--alpha", type=float, help="override the interval level 1 - alpha")

    common(sub.add_parser("simulate", help="Monte Carlo experiment"))
    fit = sub.add_parser("fit", help="fit a dataset and report significant regressors")
    common(fit, config_required=True)
    common(sub.add_parser("diagnose", help="structural checks of the approximate inverses"),
           alpha=False)
    return parser


def _overrides(data, args):
    if args.seed is not None:
        data["seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        data["alpha"] = args.alpha
    return data


def _run(args):
    raw = load_config(args.config) if args.config else {}
    raw = _overrides(dict(raw), args)
    if args.command == "simulate":
        if args.method:
            raw["methods"] = [args.method]
        config = SimulationConfig.from_dict(raw)
        report = run_simulate(config, args.out_dir)
        sys.stdout.write(report.to_csv())
    elif args.command == "fit":
        if args.method:
            raw["method"] = args.method
        config = FitConfig.from_dict(raw)
        model = run_fit(config, args.out_dir, base_dir=args.config.parent)
        print(f"{len(model.significant_features())} of {model.coef_.size} regressors significant;"
              f" tables written to {args.out_dir}")
    else:
        if args.method:
            raw["method"] = args.method
        config = DiagnoseConfig.from_dict(raw)
        report = run_diagnose(config, args.out_dir)
        for name, check in report["checks"].items():
            print(f"{name}: {'pass' if check['passed'] else 'FAIL'}")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except HDInferError as exc:
        where = getattr(exc, "stage", None)
        prefix = f"error in stage '{where}'" if where else "error"
        print(f"hdinfer: {prefix}: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError):
            return EXIT_CONFIG
        if isinstance(exc, DataError):
            return EXIT_DATA
        if isinstance(exc, NumericalError):
            return EXIT_NUMERICAL
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
