"""Command-line interface: ``fairfed {generate,run,sweep,report}``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime or
numerical error (including any failed (preset, seed) run).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment
from ._backend import BACKEND
from .config import ExperimentConfig
from .errors import ConfigError, FairFedError, FormatError
from .objective import FairnessPreset

log = logging.getLogger("fairfed")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    common.add_argument("--seeds", type=_int_list, help="comma-separated seeds, e.g. 0,1,2")
    common.add_argument("--threads", type=int, help="worker threads per round")
    common.add_argument("--data", type=Path,
                        help="dataset directory (default: <out>/data)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fairfed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the partitioned dataset")
    p = sub.add_parser("run", parents=[common], help="train presets and write results")
    p.add_argument("--preset", action="append", metavar="NAME[:BETA]",
                   help="preset to run; repeatable (default: config presets)")
    p = sub.add_parser("sweep", parents=[common], help="run one preset over a beta grid")
    p.add_argument("--preset", required=True, metavar="NAME",
                   help="rawls, qfed or custom:R:_:GAMMA (beta slot is replaced)")
    p.add_argument("--betas", type=_float_list, required=True, help="comma-separated betas")
    sub.add_parser("report", parents=[common], help="re-aggregate results in --out")
    return parser


def load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.out:
        config.out = args.out
    if args.seeds:
        config.seeds = args.seeds
    if args.threads is not None:
        config.threads = args.threads
    if getattr(args, "preset", None) and args.command == "run":
        config.presets = list(args.preset)
    return config.validate()


def sweep_presets(name: str, betas) -> list[FairnessPreset]:
    if not betas:
        raise ConfigError("beta grid is empty")
    base = FairnessPreset.parse(name)
    if base.kind.value == "custom":
        return [FairnessPreset(base.kind, beta=b, r=base.r, gamma=base.gamma) for b in betas]
    if base.kind.value not in ("rawls", "qfed"):
        raise ConfigError(f"preset {base.kind.value!r} has no beta to sweep")
    return [FairnessPreset(base.kind, beta=b) for b in betas]


def _data_dir(args, config) -> Path:
    return args.data or Path(config.out) / "data"


def _run(args) -> int:
    config = load_config(args)
    out = Path(config.out)
    if args.command == "generate":
        path = experiment.generate(config, _data_dir(args, config))
        print(f"wrote dataset to {path}")
        return EXIT_OK
    if args.command == "report":
        summary = experiment.load_summary(out)
        experiment.atomic_write(out / "report.json", experiment._dumps(summary))
        print(experiment.format_table(summary))
        return EXIT_OK

    partition = experiment.load_partition(_data_dir(args, config))
    presets = None if args.command == "run" else sweep_presets(args.preset, args.betas)
    result = experiment.run_experiment(config, partition, presets=presets, out=out)
    print(experiment.format_table(result.summary))
    if result.failed:
        for r in result.failed:
            print(f"FAILED {r.preset} seed {r.seed}: {r.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", BACKEND)
    try:
        return _run(args)
    except (ConfigError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FairFedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
