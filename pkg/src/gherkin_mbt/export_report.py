"""JSON and DOT serialization for models and run reports."""
from __future__ import annotations

import json
from typing import Optional

from .gherkin_parser import SourceLocation
from .model_builder import Model, Provenance, StateName, Transition
from .test_engine import CoverageStats, GenConfig, Outcome, RunReport, TestCase, Verdict

MODEL_SCHEMA = "model/1"
REPORT_SCHEMA = "report/1"
LABEL_LIMIT = 60


class SchemaMismatch(ValueError):
    pass


class DocumentError(ValueError):
    """Document is not valid JSON or lacks required fields."""


def _dq(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _clip(text: str) -> str:
    return text if len(text) <= LABEL_LIMIT else text[:LABEL_LIMIT - 1] + "…"


def model_to_dot(model: Model) -> str:
    starts = set(model.start_states)
    out = ["digraph model {", "  rankdir=LR;"]
    for s in sorted(model.states, key=lambda s: s.canonical):
        shape = "doublecircle" if s in starts else "circle"
        out.append(f"  {_dq(s.canonical)} [label={_dq(s.display)}, shape={shape}];")
    for t in sorted(model.transitions, key=lambda t: t.id):
        lines = [f"[pre] {p}" for p in t.preconditions]
        lines += list(t.actions)
        lines += [f"[post] {p}" for p in t.postconditions]
        label = "\\n".join(_dq(_clip(line))[1:-1] for line in [f"t{t.id}", *lines])
        out.append(f"  {_dq(t.origin.canonical)} -> {_dq(t.target.canonical)} [label=\"{label}\"];")
    out.append("}")
    return "\n".join(out) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def _load(text: str, schema: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DocumentError("top level must be an object")
    if doc.get("schema") != schema:
        raise SchemaMismatch(f"expected schema {schema!r}, found {doc.get('schema')!r}")
    return doc


def _transition_obj(t: Transition) -> dict:
    loc = t.provenance.location
    return {
        "id": t.id,
        "origin": t.origin.canonical,
        "target": t.target.canonical,
        "preconditions": list(t.preconditions),
        "actions": list(t.actions),
        "postconditions": list(t.postconditions),
        "provenance": {"feature": t.provenance.feature, "scenario": t.provenance.scenario,
                       "file": loc.file, "line": loc.line},
    }


def model_to_obj(model: Model) -> dict:
    starts = set(model.start_states)
    return {
        "schema": MODEL_SCHEMA,
        "states": [{"name": s.canonical, "display": s.display, "start": s in starts} for s in model.states],
        "transitions": [_transition_obj(t) for t in model.transitions],
    }


def model_to_json(model: Model) -> str:
    return _dump(model_to_obj(model))


def model_from_obj(doc: dict) -> Model:
    try:
        states = [StateName(s["name"], s["display"]) for s in doc["states"]]
        by_name = {s.canonical: s for s in states}
        starts = tuple(s for s, raw in zip(states, doc["states"]) if raw["start"])
        transitions = []
        for t in doc["transitions"]:
            p = t["provenance"]
            transitions.append(Transition(
                int(t["id"]), by_name[t["origin"]], by_name[t["target"]],
                tuple(t["preconditions"]), tuple(t["actions"]), tuple(t["postconditions"]),
                Provenance(p["feature"], p["scenario"], SourceLocation(p["file"], int(p["line"])))))
        return Model(tuple(states), starts, tuple(transitions))
    except (KeyError, TypeError) as exc:
        raise DocumentError(f"model document is missing or has a bad field: {exc}") from None
    except ValueError as exc:
        raise DocumentError(f"invalid model: {exc}") from None


def model_from_json(text: str) -> Model:
    return model_from_obj(_load(text, MODEL_SCHEMA))


def _case(case: Optional[TestCase]):
    return None if case is None else list(case.path)


def report_to_obj(report: RunReport) -> dict:
    c = report.config
    cov = report.coverage
    return {
        "schema": REPORT_SCHEMA,
        "config": {"seed": c.seed, "num_tests": c.num_tests, "max_length": c.max_length,
                   "shrink_budget": c.shrink_budget, "precondition_probe": c.precondition_probe},
        "executed": [
            {"path": list(case.path),
             "verdict": {"outcome": v.outcome.value, "failed_at": v.failed_at,
                         "failed_step": v.failed_step, "detail": v.detail}}
            for case, v in report.executed
        ],
        "first_failure": _case(report.first_failure),
        "shrunk_failure": _case(report.shrunk_failure),
        "coverage": {
            "states_visited": [{"name": s.canonical, "display": s.display}
                               for s in sorted(cov.states_visited, key=lambda s: s.canonical)],
            "transitions_fired": sorted(cov.transitions_fired),
            "transition_coverage": cov.transition_coverage,
        },
        "wall_time": report.wall_time,
    }


def report_to_json(report: RunReport) -> str:
    return _dump(report_to_obj(report))


def report_from_json(text: str) -> RunReport:
    doc = _load(text, REPORT_SCHEMA)
    try:
        cfg = GenConfig(**doc["config"])
        executed = tuple(
            (TestCase(tuple(e["path"])),
             Verdict(Outcome(e["verdict"]["outcome"]), e["verdict"]["failed_at"],
                     e["verdict"]["failed_step"], e["verdict"]["detail"]))
            for e in doc["executed"])
        cov = doc["coverage"]
        coverage = CoverageStats(
            frozenset(StateName(s["name"], s["display"]) for s in cov["states_visited"]),
            frozenset(cov["transitions_fired"]),
            float(cov["transition_coverage"]))

        def case(v):
            return None if v is None else TestCase(tuple(v))

        return RunReport(cfg, executed, case(doc["first_failure"]), case(doc["shrunk_failure"]),
                         coverage, float(doc["wall_time"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentError(f"report document is invalid: {exc}") from None


def _named(case: TestCase, model: Optional[Model]) -> str:
    if not case.path:
        return "(empty)"
    if model is None:
        return " -> ".join(f"t{i}" for i in case.path)
    return " -> ".join(
        model.transition(i).name if model.has_transition(i) else f"t{i}" for i in case.path)


def report_summary(report: RunReport, model: Optional[Model] = None) -> str:
    """Human-readable digest; pass ``model`` to show scenario names instead of ids."""
    n = len(report.executed)
    failures = report.failures
    exhausted = sum(1 for _, v in report.executed if v.outcome is Outcome.EXHAUSTED)
    cov = report.coverage
    lines = [f"tests run: {n} (seed {report.config.seed}, max length {report.config.max_length})",
             f"{n - failures} passed, {failures} failures"
             + (f" ({exhausted} ended with no enabled transition)" if exhausted else "")]
    if model is not None:
        lines.append(f"transition coverage: {cov.transition_coverage:.2f} "
                     f"({len(cov.transitions_fired)}/{len(model.transitions)} transitions, "
                     f"{len(cov.states_visited)}/{len(model.states)} states)")
    else:
        lines.append(f"transition coverage: {cov.transition_coverage:.2f}")
    if report.first_failure is not None:
        verdict = report.executed[-1][1]
        lines.append(f"failure: {verdict.outcome.value}"
                     + (f" at step {verdict.failed_step!r}" if verdict.failed_step else "")
                     + (f": {verdict.detail}" if verdict.detail else ""))
        lines.append(f"counterexample ({len(report.first_failure)} steps): {_named(report.first_failure, model)}")
    if report.shrunk_failure is not None:
        lines.append(f"shrunk counterexample ({len(report.shrunk_failure)} steps): "
                     f"{_named(report.shrunk_failure, model)}")
        lines.append(f"replay with: --path {report.shrunk_failure}")
    return "\n".join(lines) + "\n"
