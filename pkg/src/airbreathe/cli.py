"""Command-line entry point.

Subcommands:

* ``run CONFIG``       -- run one experiment from a JSON config file
* ``sweep CONFIG``     -- grid over selected config keys (SIR, devices, depth)
* ``verify``           -- run the oracle/property suite
* ``plotdata CSV...``  -- emit aligned plot series from telemetry files

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

from .errors import ConfigurationError
from .harness import (ExperimentConfig, apply_overrides, emit_plot_data,
                      read_telemetry_csv, run_experiment)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _load_config(path: str, seed: int | None, overrides) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    if overrides:
        data = apply_overrides(data, overrides)
    if seed is not None:
        data["master_seed"] = seed
    return ExperimentConfig.from_dict(data)


def _cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed, args.override)
    result = run_experiment(cfg)
    summary = result.summary
    print(f"scheme={summary['scheme']} trials={summary['trials']} "
          f"rounds={summary['rounds']}")
    print(f"mean final loss {summary['mean_final_loss']:.6g}, "
          f"mean final accuracy {summary['mean_final_accuracy']:.4f}")
    if result.telemetry_path is not None:
        print(f"telemetry: {result.telemetry_path}")
        print(f"summary:   {result.summary_path}")
    return EXIT_OK


def _parse_grid(values: str, cast):
    return [cast(v) for v in values.split(",") if v != ""]


def _cmd_sweep(args) -> int:
    with open(args.config) as fh:
        base = json.load(fh)
    if args.override:
        base = apply_overrides(base, args.override)
    if args.seed is not None:
        base["master_seed"] = args.seed
    axes = []
    if args.sir_db:
        axes.append(("sir_db", _parse_grid(args.sir_db, float)))
    if args.devices:
        axes.append(("num_devices", _parse_grid(args.devices, int)))
    if args.depth:
        axes.append(("depth_override", _parse_grid(args.depth, int)))
    if not axes:
        raise ConfigurationError("sweep needs at least one of "
                                 "--sir-db/--devices/--depth")
    if base.get("output_dir"):
        out_root = Path(base["output_dir"])
    else:
        out_root = Path(args.config).with_suffix("")
    index_lines = ["run_dir," + ",".join(name for name, _ in axes)
                   + ",mean_final_loss,mean_final_accuracy"]
    for combo in itertools.product(*[vals for _, vals in axes]):
        data = json.loads(json.dumps(base))
        tag = "_".join(f"{name}={val}" for (name, _), val in zip(axes, combo))
        for (name, _), val in zip(axes, combo):
            data[name] = val
        data["output_dir"] = str(out_root / f"sweep_{tag}")
        cfg = ExperimentConfig.from_dict(data)
        result = run_experiment(cfg)
        print(f"{tag}: mean final loss {result.summary['mean_final_loss']:.6g}, "
              f"accuracy {result.summary['mean_final_accuracy']:.4f}")
        index_lines.append(
            f"sweep_{tag}," + ",".join(str(v) for v in combo)
            + f",{result.summary['mean_final_loss']:.9g}"
            + f",{result.summary['mean_final_accuracy']:.9g}")
    index_path = out_root / "sweep_index.csv"
    index_path.parent.mkdir(parents=True, exist_ok=True)
    index_path.write_text("\n".join(index_lines) + "\n")
    print(f"sweep index: {index_path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verification import run_all

    results = run_all(seed=args.seed if args.seed is not None else 0)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"[{status}] {res.name} ({res.seconds:.1f}s): {res.detail}")
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def _cmd_plotdata(args) -> int:
    tables = {}
    for path in args.telemetry:
        name = Path(path).parent.name or Path(path).stem
        if name in tables:
            name = f"{name}_{len(tables)}"
        tables[name] = read_telemetry_csv(path)
    written = emit_plot_data(tables, args.output_dir)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airbreathe",
        description="Spectrum-breathing over-the-air federated learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override master_seed")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config entry (dotted paths allowed)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid over sir_db / devices / depth")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--sir-db", default="", help="comma list of SIR values")
    p_sweep.add_argument("--devices", default="", help="comma list of device counts")
    p_sweep.add_argument("--depth", default="", help="comma list of forced depths")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--override", action="append", default=[],
                         metavar="KEY=VALUE")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the oracle/property suite")
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.set_defaults(func=_cmd_verify)

    p_plot = sub.add_parser("plotdata",
                            help="emit aligned plot series from telemetry CSVs")
    p_plot.add_argument("telemetry", nargs="+", help="telemetry.csv paths")
    p_plot.add_argument("--output-dir", default="plotdata")
    p_plot.set_defaults(func=_cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
