"""Outcome of the orbit search as the advance-regime ice rate b0 moves through b.

Runs the sweep and prints the contiguous blocks of outcomes, for example::

    b0 in [1.5, 1.74]      LimitCycle           (13 points)
    b0 = 1.75              BoundaryEquilibrium
    b0 in [1.76, 2.5]      RegularSinkAdvance   (38 points)

Usage::

    python3 scripts/b0_sweep.py --out runs/sweep --workers 4
    python3 scripts/b0_sweep.py --start 1.6 --stop 1.9 --step 0.01 --set params.b1=6
"""
import argparse
import itertools
import sys

from glacial_cycles.config import ConfigError, load_config
from glacial_cycles.experiments import cmd_sweep_b0


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/sweep")
    parser.add_argument("--start", type=float)
    parser.add_argument("--stop", type=float)
    parser.add_argument("--step", type=float)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--config")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args(argv)

    overrides = [f"output.directory={args.out}"]
    for flag, key in (("start", "sweep_start"), ("stop", "sweep_stop"), ("step", "sweep_step"), ("workers", "workers")):
        if getattr(args, flag) is not None:
            overrides.append(f"experiment.{key}={getattr(args, flag)!r}")
    try:
        config = load_config(args.config, overrides + args.overrides)
    except ConfigError as exc:
        sys.exit(f"config error: {exc}")

    result = cmd_sweep_b0(config)
    for outcome, group in itertools.groupby(result.records, key=lambda r: r.outcome):
        values = [r.swept_value for r in group]
        if len(values) == 1:
            print(f"b0 = {values[0]:<18.12g} {outcome.value}")
        else:
            span = f"[{values[0]:.6g}, {values[-1]:.6g}]"
            print(f"b0 in {span:<15s} {outcome.value:<20s} ({len(values)} points)")
    if result.contiguity_violations:
        print("non-contiguous outcomes at b0 =", ", ".join(f"{v:.6g}" for v in result.contiguity_violations))
    print(f"written to {config.output.directory}/sweep_b0.json")


if __name__ == "__main__":
    main()
