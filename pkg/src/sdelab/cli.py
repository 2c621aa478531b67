"""Command-line driver.

Subcommands: simulate | distance | rate | malliavin | bounds | run.  Every
subcommand reads an INI config and supports --seed / --out overrides plus
--threads for horizon-level parallelism.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import ConfigError, parse_config, run_experiment
from .simulate import simulate_ensemble


def _load(args) -> "ExperimentConfig":
    text = Path(args.config).read_text()
    cfg = parse_config(text)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=Path(args.out))
    return cfg


def _print_report(report) -> None:
    for key, val in sorted(report.verdicts.items()):
        if isinstance(val, bool):
            print(f"{'PASS' if val else 'FAIL'}  {key}")
        else:
            print(f"      {key} = {val:.6g}" if isinstance(val, float)
                  else f"      {key} = {val}")
    for path in report.csv_paths:
        print(f"wrote {path}")
    if report.svg_path:
        print(f"wrote {report.svg_path}")
    if report.manifest_path:
        print(f"wrote {report.manifest_path}")
    print(f"wall clock {report.wall_clock:.1f} s")


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    model = cfg.build_model()
    sim = cfg.sim_config(cfg.horizons[0], 0)
    ens = simulate_ensemble(model, sim)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "ensemble.csv"
    ens.export_csv(csv_path)
    npz_path = out / "ensemble.npz"
    ens.export_npz(npz_path)
    print(f"wrote {csv_path}")
    print(f"wrote {npz_path}")
    return 0


def _cmd_experiment(args, forced: str | None = None) -> int:
    cfg = _load(args)
    if forced is not None:
        cfg = replace(cfg, experiment=forced)
    report = run_experiment(cfg, threads=args.threads)
    _print_report(report)
    bools = [v for v in report.verdicts.values() if isinstance(v, bool)]
    return 0 if all(bools) or not bools else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdelab",
        description="Monte Carlo verification of large-time Gaussian limits "
                    "of one-dimensional diffusions")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": "simulate one ensemble and export it",
        "distance": "distances to the normal at each horizon plus rate fit",
        "rate": "alias of distance (emphasis on the fitted exponent)",
        "malliavin": "pathwise derivative-norm and budget regimes",
        "bounds": "auxiliary bound suite (TV lemma, tails, functionals)",
        "run": "run the experiment named in the config",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output dir override")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads over horizons")

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command in ("distance", "rate"):
            return _cmd_experiment(args, forced="berry_esseen")
        if args.command == "malliavin":
            return _cmd_experiment(args, forced="malliavin_regimes")
        if args.command == "bounds":
            return _cmd_experiment(args, forced="bounds_suite")
        return _cmd_experiment(args)
    except (ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
