"""Command-line entry point.

Subcommands: ``run <config>``, ``verify <suite>``, ``ensemble <config>`` and
``resume <checkpoint>``.  Exit codes: 0 success (a detected stopping event
is a result), 1 configuration or usage error, 2 internal error, 3 one or
more verification checks failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from .config import load_config
from .errors import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTERNAL = 2
EXIT_CHECK_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    p = _Parser(prog="ksns", description="Pseudo-spectral stochastic Keller-Segel-Navier-Stokes simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one path and write diagnostics and checkpoints")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides output.directory)")

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])

    e = sub.add_parser("ensemble", help="Monte-Carlo ensemble of independent paths")
    e.add_argument("config")
    e.add_argument("--output", help="output directory (overrides output.directory)")
    e.add_argument("--workers", type=int, help="worker processes (KSNS_WORKERS overrides)")

    s = sub.add_parser("resume", help="continue a run from a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--output", help="output directory (defaults to the checkpoint's directory)")
    return p


def _cmd_run(args) -> int:
    from .runner import execute

    cfg = load_config(args.config)
    res = execute(cfg, args.output)
    _report_run(res)
    return EXIT_OK


def _cmd_resume(args) -> int:
    from .io import CheckpointError
    from .runner import resume

    try:
        res = resume(args.checkpoint, args.output)
    except CheckpointError as exc:
        raise ConfigError(f"{args.checkpoint}: {exc}") from None
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    _report_run(res)
    return EXIT_OK


def _report_run(res) -> None:
    where = f" -> {res.output_dir}" if res.output_dir else ""
    if res.event is not None:
        ev = res.event
        print(f"stopped: {ev.kind} at t={ev.time:.6g} ({ev.triggering_norm}={ev.triggering_value:.6g}){where}")
    else:
        print(f"completed {res.steps} steps, t={res.state.time:.6g}{where}")


def _cmd_ensemble(args) -> int:
    from .config import write_config
    from .ensemble import run_ensemble

    cfg = load_config(args.config)
    out = Path(args.output or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.yaml")
    stats = run_ensemble(cfg, workers=args.workers, output_dir=out)
    (out / "ensemble.json").write_text(json.dumps(stats.to_dict(), indent=2, allow_nan=True) + "\n", encoding="utf-8")
    print(f"{stats.path_count} paths, stops={stats.stop_counts or 0}, failed={stats.failed} -> {out / 'ensemble.json'}")
    for name, by_kind in stats.moments.items():
        est = by_kind["stopped_at_cap"]
        print(f"  {name}: mean={est.mean:.6g} se={est.stderr:.3g} 95%=[{est.ci_low:.6g}, {est.ci_high:.6g}]")
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import SUITES

    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        print(f"[{name}]")
        for check in SUITES[name]():
            print("  " + check.line())
            failed += not check.passed
    print(f"{failed} check(s) failed" if failed else "all checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


_COMMANDS = {"run": _cmd_run, "resume": _cmd_resume, "ensemble": _cmd_ensemble, "verify": _cmd_verify}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"ksns: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ksns: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"ksns: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
