"""Command-line entry point.

Subcommands::

    ifobound run <config.json>       run an experiment, write traces and report.json
    ifobound certify <config.json>   same, for resisting kinds only, with a certificate table
    ifobound bounds --n N --kappa K --eps E
    ifobound report <dir>            summarize an existing report.json

Exit codes: 0 when every asserted certificate passes, 1 when one fails,
2 for usage or configuration errors. ``IFOBOUND_OUTPUT_DIR`` overrides the
config's ``output_dir``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import analysis
from .bench import OUTPUT_ENV, RESISTING_KINDS, load_config, load_report, run_experiment
from .errors import CapacityError, ConfigError, ContractViolation

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, str):
        return v
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _print_certificates(certs) -> None:
    if not certs:
        return
    head = f"{'algo':<6}{'seed':>6}{'K':>8}{'log obs':>14}{'log bound':>14}  {'replay':<7}status"
    print(head)
    print("-" * len(head))
    for c in certs:
        obs = c["log_observed_rel_error"]
        print(f"{c['algo']:<6}{_fmt(c['seed']):>6}{c['K']:>8}{_fmt(obs):>14}"
              f"{_fmt(c['log_bound']):>14}  {_fmt(c['replay_verified']):<7}{c['status']}")


def _print_report(doc: dict) -> None:
    cfg = doc["config"]
    print(f"kind: {cfg['kind']}")
    for r in doc["runs"]:
        print(f"  {r['algo']:<6} seed={_fmt(r['seed']):<4} calls={r['calls']:<8} "
              f"rel_error={_fmt(r['final_rel_error'])}  calls_to_eps={_fmt(r['calls_to_eps'])}")
    _print_certificates(doc["certificates"])
    if doc.get("complexity"):
        print(doc["complexity"]["table"])
    roll = doc["rollup"]
    print(f"rollup: {roll['status']} ({roll['asserted']} asserted, {roll['not_asserted']} not asserted)")
    for f in roll["failed"]:
        print(f"  FAILED {f}")


def _run(args, certify: bool) -> int:
    config = load_config(args.config)
    if certify and config.kind not in RESISTING_KINDS:
        print(f"certify needs a resisting kind ({', '.join(RESISTING_KINDS)}), got {config.kind!r}",
              file=sys.stderr)
        return EXIT_USAGE
    out = os.environ.get(OUTPUT_ENV) or args.output_dir or config.output_dir
    report = run_experiment(config, output_dir=out)
    _print_report(report.to_dict())
    print(f"wrote {out}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _bounds(args) -> int:
    r = analysis.rate_report(args.kappa, args.n, args.gamma, args.eps)
    if args.json:
        print(json.dumps(r.to_dict(), indent=2))
        return EXIT_OK
    print(f"n = {r.n}, kappa = {r.kappa:.6g}, kappa_c = {r.kappa_c:.6g}")
    print(f"q = {r.q:.12g} (log q = {r.log_q:.12g})")
    if args.K is not None:
        b = analysis.lower_bound_curve(r.gamma, r.kappa, r.n, args.K)
        print(f"bound at K = {args.K}: {b.value:.6g} (log {b.log:.6g})")
    print(f"calls for eps = {r.eps:g}: K_exact = {r.K_exact}, K_closed = {r.K_closed}")
    return EXIT_OK


def _report(args) -> int:
    try:
        doc = load_report(args.directory)
    except FileNotFoundError:
        print(f"no report.json in {args.directory}", file=sys.stderr)
        return EXIT_USAGE
    _print_report(doc)
    return EXIT_OK if doc["rollup"]["status"] == "pass" else EXIT_FAIL


def _positive_float(text):
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"not a finite number: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ifobound", description="Finite-sum lower-bound certification harness.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("run", "run an experiment config"),
                        ("certify", "run a resisting-oracle config and print certificates")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="JSON experiment config")
        s.add_argument("--output-dir", help="override the config's output_dir")
    b = sub.add_parser("bounds", help="lower-bound rate and call counts")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--kappa", type=_positive_float, required=True)
    b.add_argument("--eps", type=_positive_float, required=True)
    b.add_argument("--gamma", type=_positive_float, default=1.0)
    b.add_argument("--K", type=int, default=None, help="also print the bound after K calls")
    b.add_argument("--json", action="store_true")
    r = sub.add_parser("report", help="summarize a report directory")
    r.add_argument("directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run", "certify"):
            return _run(args, certify=args.command == "certify")
        if args.command == "bounds":
            return _bounds(args)
        return _report(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
