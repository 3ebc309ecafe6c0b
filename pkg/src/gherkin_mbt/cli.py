"""``gherkin-mbt``: lint feature files, build models, run and replay tests.

Exit codes: 0 success, 1 findings (lint errors, build errors, failing test),
2 usage, I/O, parse or executor trouble.
"""
from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

from .executor_protocol import DEFAULT_TIMEOUT_MS, ExecutorFault, check_conformance, spawn_executor
from .export_report import DocumentError, model_from_json, model_to_dot, model_to_json, report_summary, report_to_json
from .gherkin_parser import Diagnostic, ParseError, lint_conventions, parse_file
from .model_builder import build_model, scenarios_of
from .test_engine import (
    GenConfig,
    InvalidPath,
    NoStartState,
    Outcome,
    TestCase,
    generate_and_run,
    replay,
    validate_path,
)

EXIT_OK, EXIT_FINDINGS, EXIT_TROUBLE = 0, 1, 2


class _Trouble(Exception):
    pass


def _feature_files(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.rglob("*.feature")))
        elif p.exists():
            files.append(p)
        else:
            raise _Trouble(f"{p}: no such file or directory")
    return files


def cmd_lint(args) -> int:
    errors = 0
    for f in _feature_files(args.paths):
        try:
            feature = parse_file(f)
        except ParseError as exc:
            print(Diagnostic("error", exc.message, exc.location))
            errors += 1
            continue
        except (OSError, UnicodeDecodeError) as exc:
            raise _Trouble(f"{f}: {exc}") from None
        for d in lint_conventions(feature):
            print(d)
            errors += d.severity == "error"
    return EXIT_FINDINGS if errors else EXIT_OK


def cmd_build(args) -> int:
    features = []
    for f in _feature_files(args.paths):
        try:
            features.append(parse_file(f))
        except ParseError as exc:
            print(Diagnostic("error", exc.message, exc.location), file=sys.stderr)
            return EXIT_TROUBLE
        except (OSError, UnicodeDecodeError) as exc:
            raise _Trouble(f"{f}: {exc}") from None

    scenarios = scenarios_of(features)
    report = build_model(scenarios)
    for e in report.errors:
        print(e, file=sys.stderr)
    try:
        Path(args.out).write_text(model_to_json(report.model), encoding="utf-8")
        if args.dot:
            Path(args.dot).write_text(model_to_dot(report.model), encoding="utf-8")
    except OSError as exc:
        raise _Trouble(str(exc)) from None

    m = report.model
    print(f"{len(m.states)} states ({len(m.start_states)} start), {len(m.transitions)} transitions, "
          f"{len(report.errors)} errors -> {args.out}")
    if not scenarios:
        print("no scenarios found", file=sys.stderr)
        return EXIT_FINDINGS
    return EXIT_FINDINGS if report.errors else EXIT_OK


def _load_model(path):
    try:
        return model_from_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, DocumentError) as exc:
        raise _Trouble(f"{path}: {exc}") from None


def _spawn(args):
    argv = shlex.split(args.executor)
    try:
        return spawn_executor(argv, args.timeout_ms)
    except ExecutorFault as exc:
        raise _Trouble(f"executor: {type(exc).__name__}: {exc}") from None


def cmd_run(args) -> int:
    model = _load_model(args.model)
    try:
        config = GenConfig(args.seed, args.tests, args.max_length, args.shrink_budget, not args.no_probe)
    except ValueError as exc:
        raise _Trouble(str(exc)) from None
    if not model.start_states:
        raise _Trouble("model has no start state")
    handle = _spawn(args)
    try:
        report = generate_and_run(model, handle, config)
    except NoStartState as exc:
        raise _Trouble(str(exc)) from None
    finally:
        handle.shutdown()
    if args.report:
        Path(args.report).write_text(report_to_json(report), encoding="utf-8")
    sys.stdout.write(report_summary(report, model))
    outcomes = {v.outcome for _, v in report.executed}
    if Outcome.EXECUTOR_ERROR in outcomes:
        return EXIT_TROUBLE
    return EXIT_FINDINGS if Outcome.POSTCONDITION_FAILED in outcomes else EXIT_OK


def _parse_path(text: str) -> tuple[int, ...]:
    ids = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        try:
            ids.append(int(part[1:] if part[:1] in "tT" else part))
        except ValueError:
            raise _Trouble(f"bad transition id {part!r}") from None
    return tuple(ids)


def cmd_replay(args) -> int:
    model = _load_model(args.model)
    case = TestCase(_parse_path(args.path))
    try:
        validate_path(model, case.path)
    except InvalidPath as exc:
        raise _Trouble(f"invalid path: {exc}") from None
    handle = _spawn(args)
    try:
        verdict = replay(model, handle, case, not args.no_probe)
    finally:
        handle.shutdown()
    line = f"{verdict.outcome.value}"
    if verdict.failed_at is not None:
        line += f" at index {verdict.failed_at}"
    if verdict.failed_step:
        line += f" ({verdict.failed_step!r})"
    if verdict.detail:
        line += f": {verdict.detail}"
    print(line)
    if verdict.outcome is Outcome.POSTCONDITION_FAILED:
        return EXIT_FINDINGS
    return EXIT_TROUBLE if verdict.outcome is Outcome.EXECUTOR_ERROR else EXIT_OK


def cmd_conform(args) -> int:
    probe = (args.probe_phase, args.probe_text) if args.probe_text else None
    results = check_conformance(shlex.split(args.executor), args.timeout_ms, probe)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FINDINGS


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gherkin-mbt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("lint", help="check feature files against the state conventions")
    s.add_argument("paths", nargs="+")
    s.set_defaults(func=cmd_lint)

    s = sub.add_parser("build", help="build a model from feature files")
    s.add_argument("paths", nargs="+")
    s.add_argument("--out", default="model.json")
    s.add_argument("--dot", help="also write a Graphviz rendering")
    s.set_defaults(func=cmd_build)

    def executor_flags(s):
        s.add_argument("--model", required=True)
        s.add_argument("--executor", required=True, help='executor command line, e.g. "sim --spec stack.json"')
        s.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS)
        s.add_argument("--no-probe", action="store_true", help="fire transitions without checking preconditions")

    s = sub.add_parser("run", help="generate and execute tests")
    executor_flags(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tests", type=int, default=100)
    s.add_argument("--max-length", type=int, default=10)
    s.add_argument("--shrink-budget", type=int, default=500)
    s.add_argument("--report", help="write the JSON report here")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("replay", help="execute one exact path")
    executor_flags(s)
    s.add_argument("--path", required=True, help='comma-separated ids, e.g. "t3,t1,t7"')
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("conform", help="run the executor conformance checklist")
    s.add_argument("--executor", required=True)
    s.add_argument("--timeout-ms", type=int, default=DEFAULT_TIMEOUT_MS)
    s.add_argument("--probe-phase", default="precondition", choices=["precondition", "action", "postcondition"])
    s.add_argument("--probe-text", help="a step the executor understands, for the determinism check")
    s.set_defaults(func=cmd_conform)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Trouble as exc:
        print(f"gherkin-mbt: {exc}", file=sys.stderr)
        return EXIT_TROUBLE


if __name__ == "__main__":
    sys.exit(main())
