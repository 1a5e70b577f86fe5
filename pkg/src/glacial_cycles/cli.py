"""``glacial-cycles`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, OutputSettings, RunConfig, load_config
from .experiments import (
    InadmissibleEpsilon,
    cmd_check_epsilon,
    cmd_equilibria,
    cmd_nullclines,
    cmd_orbit,
    cmd_simulate,
    cmd_sweep_b0,
    run_check_epsilon,
)
from .integrator import IntegrationError
from .section import MapUndefined, NoOrbitFound

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _report_equilibria(record, config):
    for note in record.diagnostics:
        print(f"warning: {note}", file=sys.stderr)
    for e in record.equilibria:
        print(
            f"{e.regime.value:8s} {e.stability.value:10s} {e.classification.value:8s} "
            f"w={e.state.w:.6f} eta={e.state.eta:.6f} xi={e.state.xi:.6f} h={e.switching_value:.3e}"
        )


def _report_simulation(summary, config):
    print(
        f"terminated: {summary.termination.value} at t={summary.final_time:.6g} "
        f"after {summary.n_events} crossings ({summary.n_samples} samples)"
    )
    if summary.diagnostic:
        print(f"note: {summary.diagnostic}")


def _report_orbit(summary, config):
    o = summary.orbit
    print(summary.epsilon.describe())
    print(
        f"fixed point w={o.fixed_point.w:.10f} eta={o.fixed_point.eta:.10f} "
        f"period={o.period:.6f} closure={o.closure_error:.3e} iterations={o.iterations}"
    )
    print(f"crossings per period: {summary.crossings_per_period}; "
          f"max seed disagreement: {summary.max_seed_disagreement:.3e}")


def _report_sweep(result, config):
    for r in result.records:
        tag = " (refined)" if r.refined else ""
        print(f"b0={r.swept_value:.12g}{tag}: {r.outcome.value}")
    if result.contiguity_violations:
        print(
            "warning: outcomes not contiguous at b0 = "
            + ", ".join(f"{v:.6g}" for v in result.contiguity_violations),
            file=sys.stderr,
        )


def _report_nullclines(summary, config):
    for r in summary.roots:
        print(f"{r.regime.value:8s} root eta={r.eta:.6f} w={r.w:.6f} ({r.stability.value})")
    for k, v in sorted(summary.pole_values.items()):
        print(f"at eta=1: {k} = {v:.6f}")


def _report_epsilon(report, config):
    print(report.describe())


COMMANDS = {
    "equilibria": (cmd_equilibria, _report_equilibria, "equilibria of both fields with classification"),
    "simulate": (cmd_simulate, _report_simulation, "integrate one hybrid trajectory"),
    "orbit": (cmd_orbit, _report_orbit, "find the periodic orbit and trace one period"),
    "sweep-b0": (cmd_sweep_b0, _report_sweep, "classify outcomes along a b0 sweep"),
    "nullclines": (cmd_nullclines, _report_nullclines, "sample nullclines and tangency curves"),
    "check-epsilon": (cmd_check_epsilon, _report_epsilon, "check epsilon against the separation bound"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glacial-cycles", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
            help="override one config key; applied after the file, may repeat",
        )
        if name == "orbit":
            p.add_argument("--allow-inadmissible", action="store_true",
                           help="search even if epsilon is not below the bound")
    return parser


def resolve_config(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.directory={args.out}")
    if getattr(args, "allow_inadmissible", False):
        overrides.append("experiment.allow_inadmissible=true")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    command, report, _ = COMMANDS[args.command]
    try:
        result = command(config)
    except InadmissibleEpsilon as exc:
        print(f"refused: {exc}", file=sys.stderr)
        print(run_check_epsilon(config.params).describe(), file=sys.stderr)
        return EXIT_USAGE
    except NoOrbitFound as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        print("trace: " + " ".join(f"{d:.3e}" for d in exc.trace), file=sys.stderr)
        return EXIT_NUMERICAL
    except (MapUndefined, IntegrationError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    report(result, config)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
