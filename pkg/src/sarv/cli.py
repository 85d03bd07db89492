"""``sarv`` command line.

Exit codes:
  0   Fixpoint and overall Clean or Resolved
  1   unresolved Warning
  2   Failure
  3   a resource bound was hit (takes precedence over verdicts)
  64  usage error
  65  malformed input (rule/fact syntax, dataset, qualifier)
  66  input file missing or unreadable
  73  output file could not be written
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .engine import Limits, SaturationResult, saturate
from .parser import Program, RuleSyntaxError, load_facts, load_program

EXIT_OK, EXIT_WARNING, EXIT_FAILURE, EXIT_BOUND = 0, 1, 2, 3
EXIT_USAGE, EXIT_DATA, EXIT_NOINPUT, EXIT_CANTCREAT = 64, 65, 66, 73

VERDICT_EXIT = {"Clean": EXIT_OK, "Resolved": EXIT_OK, "Warning": EXIT_WARNING, "Failure": EXIT_FAILURE}


class _Exit(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse's own exit code 2 would read as Failure
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise _Exit(EXIT_CANTCREAT, f"{path}: {e.strerror or e}") from None


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise _Exit(EXIT_NOINPUT, f"{path}: {e.strerror or e}") from None


def _load(args) -> tuple[Program, list]:
    for p in [*args.rules, *(args.facts or [])]:
        if not Path(p).is_file():
            raise _Exit(EXIT_NOINPUT, f"{p}: no such file")
    try:
        program = load_program(*args.rules)
        facts = [t for f in (args.facts or []) for t in load_facts(f)]
    except RuleSyntaxError as e:
        raise _Exit(EXIT_DATA, str(e)) from None
    except OSError as e:
        raise _Exit(EXIT_NOINPUT, str(e)) from None
    return program, facts


def _limits(pairs: Optional[Sequence[str]]) -> Limits:
    try:
        return Limits.from_pairs(pairs or [])
    except ValueError as e:
        raise _Exit(EXIT_USAGE, f"--limits: {e}") from None


def _saturate(args) -> SaturationResult:
    program, facts = _load(args)
    return saturate(program, facts, _limits(args.limits))


def _status_line(result: SaturationResult) -> str:
    return f"status: {result.status} rounds={result.rounds_used} facts={len(result.memory)}"


def _lattice_outputs(args, result: SaturationResult):
    from .lattice import build_lattice, export_dot, export_json

    lattice = build_lattice(result)
    if args.dot:
        _write(args.dot, export_dot(lattice))
    if getattr(args, "json", None):
        _write(args.json, export_json(lattice))
    if args.figure:
        from .plotting import plot_lattice_growth

        plot_lattice_growth(result, args.figure)
    return lattice


def cmd_check(args) -> int:
    from .lattice import compliance_report, extract_verdicts

    result = _saturate(args)
    lattice = _lattice_outputs(args, result)
    report = compliance_report(extract_verdicts(result.memory), lattice, result)
    if args.out:
        _write(args.out, report.to_json())
    print(f"overall: {report.overall}")
    for v in report.verdicts:
        if v.subject is not None:
            print(f"{v.kind}: {v.subject.text}")
    print(_status_line(result))
    if not result.fixpoint:
        return EXIT_BOUND
    return VERDICT_EXIT[report.overall]


def cmd_run(args) -> int:
    result = _saturate(args)
    _lattice_outputs(args, result)
    if args.dump_facts:
        for line in result.fact_lines():
            print(line)
    if args.diagnostics:
        for d in result.diagnostics:
            print(d, file=sys.stderr)
    print(_status_line(result))
    return EXIT_OK if result.fixpoint else EXIT_BOUND


def _karb_inputs(args, labeled: bool = True):
    from .karb import DatasetError, ingest_csv

    try:
        rules = load_program(args.rules)
    except RuleSyntaxError as e:
        raise _Exit(EXIT_DATA, str(e)) from None
    except OSError as e:
        raise _Exit(EXIT_NOINPUT, str(e)) from None
    data = None
    if getattr(args, "dataset", None):
        try:
            data = ingest_csv(_read(args.dataset), labeled=labeled)
        except DatasetError as e:
            raise _Exit(EXIT_DATA, f"{args.dataset}: {e}") from None
    return rules, data


def _load_qualifier(path: str, rules: Program):
    from .karb import Qualifier

    try:
        return Qualifier.from_json(_read(path), rules)
    except (ValueError, KeyError) as e:
        raise _Exit(EXIT_DATA, f"{path}: {e}") from None


def cmd_karb_fit(args) -> int:
    from .karb import Binarization, FitConfig, fit_with_trace

    rules, data = _karb_inputs(args)
    try:
        cfg = FitConfig(seed=args.seed, iterations=args.iters, restarts=args.restarts,
                        step=args.step, decay=args.decay, objective=args.objective)
        res = fit_with_trace(rules, data, cfg, Binarization.parse(args.binarize), workers=args.workers)
    except ValueError as e:
        raise _Exit(EXIT_DATA, str(e)) from None
    _write(args.qualifier, res.qualifier.to_json())
    if args.figure:
        from .plotting import plot_fit_trace

        plot_fit_trace([t.trace for t in res.restarts], args.figure)
    for k, t in enumerate(res.restarts, start=1):
        print(f"restart {k}: initial={t.initial_fitness!r} final={t.final_fitness!r}")
    print(f"fitness: {res.fitness!r}")
    return EXIT_OK


def cmd_karb_eval(args) -> int:
    from .karb import evaluate

    rules, data = _karb_inputs(args)
    q = _load_qualifier(args.qualifier, rules)
    try:
        metrics = evaluate(q, data)
    except ValueError as e:
        raise _Exit(EXIT_DATA, str(e)) from None
    print(json.dumps(metrics))
    if args.figure:
        from .plotting import plot_metrics

        plot_metrics(metrics, args.figure)
    return EXIT_OK


def cmd_karb_synth(args) -> int:
    from .karb import DEFAULT_SCHEMA, generate_synthetic, write_csv

    rules, _ = _karb_inputs(args)
    q = _load_qualifier(args.qualifier, rules)
    data = generate_synthetic(args.seed, args.n, q, noise=args.noise)
    _write(args.out, write_csv(data.records, list(DEFAULT_SCHEMA)))
    print(f"records: {len(data.records)} flipped={int(data.flipped.sum())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sarv", description="Rule-based saturation and compliance checking.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def engine_args(sp):
        sp.add_argument("--rules", nargs="+", required=True, metavar="FILE", help="rule files, concatenated in order")
        sp.add_argument("--facts", action="append", metavar="FILE", help="fact file (repeatable)")
        sp.add_argument("--limits", nargs="+", metavar="K=V", help="max_rounds, max_facts, max_term_depth, max_multiplicity")
        sp.add_argument("--dot", metavar="FILE", help="write the derivation lattice as DOT")
        sp.add_argument("--figure", metavar="FILE", help="plot facts per round (CSV written alongside)")

    c = sub.add_parser("check", help="saturate and classify compliance verdicts")
    engine_args(c)
    c.add_argument("--out", metavar="FILE", help="write the JSON compliance report")
    c.set_defaults(func=cmd_check)

    r = sub.add_parser("run", help="saturate and report the working memory")
    engine_args(r)
    r.add_argument("--dump-facts", action="store_true", help="print every fact, canonical order")
    r.add_argument("--json", metavar="FILE", help="write the derivation lattice as JSON")
    r.add_argument("--diagnostics", action="store_true", help="print engine diagnostics to stderr")
    r.set_defaults(func=cmd_run)

    k = sub.add_parser("karb", help="weighted-qualifier benchmarking")
    ksub = k.add_subparsers(dest="karb_command", required=True, parser_class=_Parser)

    kf = ksub.add_parser("fit", help="fit qualifier weights to a labeled dataset")
    kf.add_argument("--dataset", required=True, metavar="FILE")
    kf.add_argument("--rules", required=True, metavar="FILE")
    kf.add_argument("--qualifier", required=True, metavar="FILE", help="output JSON")
    kf.add_argument("--seed", type=int, default=0)
    kf.add_argument("--iters", type=int, default=500)
    kf.add_argument("--restarts", type=int, default=2)
    kf.add_argument("--step", type=float, default=0.5)
    kf.add_argument("--decay", type=float, default=0.999)
    kf.add_argument("--objective", choices=["error_rate", "mse"], default="error_rate")
    kf.add_argument("--binarize", default="label = 5")
    kf.add_argument("--workers", type=int, default=1)
    kf.add_argument("--figure", metavar="FILE", help="plot the fitness trace")
    kf.set_defaults(func=cmd_karb_fit)

    ke = ksub.add_parser("eval", help="score a dataset with a fitted qualifier")
    ke.add_argument("--dataset", required=True, metavar="FILE")
    ke.add_argument("--rules", required=True, metavar="FILE")
    ke.add_argument("--qualifier", required=True, metavar="FILE")
    ke.add_argument("--figure", metavar="FILE", help="plot metrics against the baseline")
    ke.set_defaults(func=cmd_karb_eval)

    ks = ksub.add_parser("synth", help="generate a labeled dataset from a planted qualifier")
    ks.add_argument("--rules", required=True, metavar="FILE")
    ks.add_argument("--qualifier", required=True, metavar="FILE")
    ks.add_argument("--seed", type=int, required=True)
    ks.add_argument("--n", type=int, required=True)
    ks.add_argument("--noise", type=float, default=0.05)
    ks.add_argument("--out", required=True, metavar="FILE")
    ks.set_defaults(func=cmd_karb_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Exit as e:
        print(f"sarv: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
