"""Command-line entry point.

Every run writes into ``<out>/<config hash>-s<seed>/`` together with the
resolved config, so a run can be repeated from its own directory.

Exit codes: 0 success, 1 usage error, 2 invalid config, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import Config, default_config, load_config
from .errors import ConfigError
from .scheduler import POLICIES

log = logging.getLogger("icosched")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route it to our code 1 instead
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _policies(text: str) -> list[str]:
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in POLICIES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"policies must be a comma list drawn from {','.join(POLICIES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icosched", description="Interference-aware scheduling: datasets, models, simulations.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, out_default="runs"):
        sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=out_default, help="parent directory for run directories (default: %(default)s)")
        sp.add_argument("--parallelism", type=int, default=os.cpu_count() or 1,
                        help="worker processes/threads (default: %(default)s)")

    sp = sub.add_parser("gen-dataset", help="simulate training samples for the latency model")
    common(sp)
    sp.add_argument("--runs", type=int, help="number of randomised simulator runs (default: from config)")

    sp = sub.add_parser("train", help="fit the latency forest and the resource lines")
    common(sp)
    sp.add_argument("--dataset", help="dataset CSV from gen-dataset (default: generate one)")

    sp = sub.add_parser("simulate", help="run one policy on one seed")
    common(sp)
    sp.add_argument("--policy", choices=POLICIES, default="ico")
    sp.add_argument("--model", help="model directory from train (default: train one)")
    sp.add_argument("--format", choices=("json", "csv"), default="json", help="extra summary format")

    sp = sub.add_parser("compare", help="run all policies over the configured seeds")
    common(sp)
    sp.add_argument("--policies", type=_policies, help=f"comma list (default: from config; any of {','.join(POLICIES)})")
    sp.add_argument("--model", help="model directory from train (default: train one)")
    sp.add_argument("--format", choices=("json", "csv"), default="json", help="extra summary format")

    sp = sub.add_parser("motivation", help="response time vs scheduling latency and CPU utilisation fits")
    common(sp)

    sp = sub.add_parser("dump-default-config", help="print the default config as YAML")
    sp.add_argument("--out", help="write to this file instead of standard output")
    return p


def _resolve(args) -> tuple[Config, Path]:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.parallelism < 1:
        raise UsageError("--parallelism must be >= 1")
    run_dir = Path(args.out) / f"{config.digest()}-s{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(config.to_yaml())
    return config, run_dir


def _models(args, config, run_dir, need: bool):
    from . import experiment as ex

    if args.model:
        return ex.TrainedModels.load(args.model)
    if not need:
        return None
    log.info("no --model given; generating a dataset and training")
    models = ex.train_models(config, n_jobs=args.parallelism)
    models.save(run_dir / "model")
    return models


def _cmd_gen_dataset(args) -> int:
    from . import experiment as ex

    config, run_dir = _resolve(args)
    ds = ex.generate_training_dataset(config, args.runs)
    ds.save(run_dir / "dataset.csv")
    print(f"{len(ds)} samples -> {run_dir / 'dataset.csv'}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from . import experiment as ex

    config, run_dir = _resolve(args)
    dataset = ex.Dataset.load(args.dataset) if args.dataset else None
    models = ex.train_models(config, dataset, n_jobs=args.parallelism)
    models.save(run_dir / "model")
    print(json.dumps(models.evaluation, indent=2, sort_keys=True))
    print(f"model -> {run_dir / 'model'}")
    return EXIT_OK


def _compare(args, policies, seeds) -> int:
    from . import experiment as ex

    config, run_dir = _resolve(args)
    models = _models(args, config, run_dir, need=any(p in ("ico", "hup") for p in policies))
    report, results = ex.run_comparison(config, models, policies, seeds, args.parallelism)
    ex.write_comparison(run_dir, config, report, results, args.format)
    print(ex.summary_table(report))
    print(f"report -> {run_dir / 'report.json'}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else load_config(args.config).seed
    return _compare(args, [args.policy], [seed])


def _cmd_compare(args) -> int:
    from . import experiment as ex

    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return _compare(args, args.policies or list(config.experiment.policies), ex.experiment_seeds(config))


def _cmd_motivation(args) -> int:
    from . import experiment as ex

    config, run_dir = _resolve(args)
    report = ex.motivation_fit(config)
    (run_dir / "fit_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for name in ("exp1", "exp2"):
        r = report[name]
        print(f"{name}: R2 runqlat={r['runqlat']['r2']:.4f} cpu={r['cpu']['r2']:.4f}  "
              f"MAPE runqlat={r['runqlat']['mape']:.4f} cpu={r['cpu']['mape']:.4f}")
    print(f"report -> {run_dir / 'fit_report.json'}")
    return EXIT_OK


def _cmd_dump(args) -> int:
    text = default_config().to_yaml()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "gen-dataset": _cmd_gen_dataset,
    "train": _cmd_train,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "motivation": _cmd_motivation,
    "dump-default-config": _cmd_dump,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"icosched: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"icosched: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"icosched: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
