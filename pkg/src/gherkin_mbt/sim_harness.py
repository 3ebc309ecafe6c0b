"""Deterministic reference executor driven by a declarative JSON spec.

A spec declares integer variables, a set of pages and an ordered rule list.
Steps are dispatched to the first rule of their phase whose pattern (and
optional guard) matches. Precondition and postcondition rules only judge;
action rules only mutate. Faults force a named postcondition rule to fail
when their trigger holds, which is how sequence-dependent bugs are seeded.

Run as an executor with ``sim --spec stack.json``.
"""
from __future__ import annotations

import argparse
import ast
import json
import operator
import re
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

import jsonschema

from .executor_protocol import (
    PROTOCOL_VERSION,
    Error,
    ExecutorGone,
    Fail,
    MalformedFrame,
    Ok,
    Reset,
    Shutdown,
    Step,
    StepResult,
    decode,
    encode,
)
from .gherkin_parser import Diagnostic

_CAPTURE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


class SimSpecError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(d.message for d in self.diagnostics))


def _schema() -> dict:
    text = resources.files("gherkin_mbt").joinpath("schemas/simspec.schema.json").read_text("utf-8")
    return json.loads(text)


# --- expressions -------------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.FloorDiv: operator.floordiv, ast.Mod: operator.mod,
}
_CMPOPS = {
    ast.Eq: operator.eq, ast.NotEq: operator.ne, ast.Lt: operator.lt,
    ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge,
}


class Expr:
    """A tiny arithmetic/comparison language over integer variables and ``page``."""

    def __init__(self, source: str):
        self.source = source
        try:
            self.tree = ast.parse(source, mode="eval").body
        except SyntaxError as exc:
            raise ValueError(f"invalid expression {source!r}: {exc.msg}") from None
        self.names = set()
        self._check(self.tree)

    def _check(self, node):
        if isinstance(node, ast.Name):
            self.names.add(node.id)
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, str)):
                raise ValueError(f"unsupported literal in {self.source!r}")
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.Not)):
            self._check(node.operand)
        elif isinstance(node, ast.BoolOp):
            for v in node.values:
                self._check(v)
        elif isinstance(node, ast.Compare) and all(type(o) in _CMPOPS for o in node.ops):
            self._check(node.left)
            for c in node.comparators:
                self._check(c)
        else:
            raise ValueError(f"unsupported syntax in {self.source!r}")

    def __call__(self, env: dict):
        return self._eval(self.tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.Name):
            if node.id in ("true", "True"):
                return env.get(node.id, True)
            if node.id in ("false", "False"):
                return env.get(node.id, False)
            return env[node.id]
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else not v
        if isinstance(node, ast.BoolOp):
            vals = (self._eval(v, env) for v in node.values)
            return all(vals) if isinstance(node.op, ast.And) else any(vals)
        left = self._eval(node.left, env)
        for op, comp in zip(node.ops, node.comparators):
            right = self._eval(comp, env)
            if not _CMPOPS[type(op)](left, right):
                return False
            left = right
        return True


_BUILTIN_NAMES = {"page", "true", "false", "True", "False"}


class Pattern:
    """Step-text template; ``{name}`` captures an integer."""

    def __init__(self, template: str):
        self.template = template
        self.captures = _CAPTURE.findall(template)
        parts = []
        pos = 0
        for m in _CAPTURE.finditer(template):
            parts.append(re.escape(template[pos:m.start()]))
            parts.append(f"(?P<{m.group(1)}>-?[0-9]+)")
            pos = m.end()
        parts.append(re.escape(template[pos:]))
        self.regex = re.compile("".join(parts))

    def match(self, text: str) -> Optional[dict]:
        m = self.regex.fullmatch(text)
        if m is None:
            return None
        return {k: int(v) for k, v in m.groupdict().items()}


# --- spec --------------------------------------------------------------------

@dataclass
class Rule:
    phase: str
    pattern: Pattern
    name: str
    guard: Optional[Expr] = None
    verdict: Optional[Expr] = None
    effects: dict = field(default_factory=dict)
    goto: Optional[str] = None


@dataclass
class Fault:
    rule: str
    when: Optional[Expr] = None
    after_action: Optional[Pattern] = None
    min_actions: int = 0

    def triggered(self, env, last_action, actions_fired) -> bool:
        if actions_fired < self.min_actions:
            return False
        if self.after_action is not None:
            if last_action is None or self.after_action.match(last_action) is None:
                return False
        return self.when is None or bool(self.when(env))


@dataclass
class SimSpec:
    variables: dict[str, int]
    pages: list[str]
    current_page_initial: str
    rules: list[Rule]
    faults: list[Fault] = field(default_factory=list)


def _diagnose(data: Any, origin: str) -> tuple[list[Diagnostic], Optional[SimSpec]]:
    diags: list[Diagnostic] = []

    def err(msg):
        diags.append(Diagnostic("error", f"{origin}: {msg}"))

    def warn(msg):
        diags.append(Diagnostic("warning", f"{origin}: {msg}"))

    validator = jsonschema.Draft202012Validator(_schema())
    structural = sorted(validator.iter_errors(data), key=lambda e: [str(p) for p in e.absolute_path])
    for e in structural:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        err(f"{where}: {e.message}")
    if structural:
        return diags, None

    variables = dict(data["variables"])
    pages = list(data["pages"])
    if data["current_page_initial"] not in pages:
        err(f"current_page_initial {data['current_page_initial']!r} is not a declared page")

    def expr(src, where, allowed):
        try:
            e = Expr(src)
        except ValueError as exc:
            err(f"{where}: {exc}")
            return None
        for name in sorted(e.names - allowed - _BUILTIN_NAMES):
            err(f"{where}: undefined variable {name!r}")
        return e

    rules: list[Rule] = []
    seen: dict[tuple[str, str], Rule] = {}
    for i, r in enumerate(data["rules"]):
        where = f"rules[{i}]"
        phase = r["phase"]
        pat = Pattern(r["pattern"])
        for cap in pat.captures:
            if cap in variables:
                err(f"{where}: capture {{{cap}}} shadows a variable")
        allowed = set(variables) | set(pat.captures)
        rule = Rule(phase, pat, r.get("name", r["pattern"]))
        if "guard" in r:
            rule.guard = expr(r["guard"], f"{where}.guard", allowed)
        if phase == "action":
            if "verdict" in r:
                err(f"{where}: action rules cannot have a verdict")
            for var, src in r.get("effects", {}).items():
                if var not in variables:
                    err(f"{where}.effects: undefined variable {var!r}")
                rule.effects[var] = expr(src, f"{where}.effects.{var}", allowed)
            if "goto" in r:
                if r["goto"] not in pages:
                    err(f"{where}: goto page {r['goto']!r} is not declared")
                rule.goto = r["goto"]
        else:
            if r.get("effects") or "goto" in r:
                err(f"{where}: {phase} rules must be side-effect-free")
            if "verdict" in r:
                rule.verdict = expr(r["verdict"], f"{where}.verdict", allowed)

        key = (phase, r["pattern"])
        prior = seen.get(key)
        if prior is not None and prior.guard is None:
            warn(f"{where}: unreachable, pattern {r['pattern']!r} is shadowed by an earlier {phase} rule")
        elif prior is None:
            seen[key] = rule
        rules.append(rule)

    post_names = {r.name for r in rules if r.phase == "postcondition"}
    faults = []
    for i, f in enumerate(data.get("faults", [])):
        where = f"faults[{i}]"
        if f["rule"] not in post_names:
            err(f"{where}: {f['rule']!r} does not name a postcondition rule")
        fault = Fault(f["rule"], min_actions=f.get("min_actions", 0))
        if "when" in f:
            fault.when = expr(f["when"], f"{where}.when", set(variables))
        if "after_action" in f:
            fault.after_action = Pattern(f["after_action"])
        faults.append(fault)

    if any(d.severity == "error" for d in diags):
        return diags, None
    return diags, SimSpec(variables, pages, data["current_page_initial"], rules, faults)


def validate_spec(spec_file) -> list[Diagnostic]:
    """Check a spec file; returns diagnostics (empty when clean)."""
    try:
        with open(spec_file, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        return [Diagnostic("error", f"{spec_file}: not valid JSON: {exc}")]
    return _diagnose(data, str(spec_file))[0]


def load_spec(spec_file) -> SimSpec:
    with open(spec_file, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SimSpecError([Diagnostic("error", f"{spec_file}: not valid JSON: {exc}")]) from None
    return spec_from_data(data, str(spec_file))


def spec_from_data(data: dict, origin: str = "<spec>") -> SimSpec:
    diags, spec = _diagnose(data, origin)
    if spec is None:
        raise SimSpecError([d for d in diags if d.severity == "error"])
    return spec


# --- simulator ---------------------------------------------------------------

class Simulator:
    def __init__(self, spec: SimSpec):
        self.spec = spec
        self._reset_state()

    def _reset_state(self):
        self.variables = dict(self.spec.variables)
        self.page = self.spec.current_page_initial
        self.actions_fired = 0
        self.last_action: Optional[str] = None

    def snapshot(self):
        return dict(self.variables), self.page, self.actions_fired, self.last_action

    def handle(self, msg):
        if isinstance(msg, Reset):
            if msg.protocol != PROTOCOL_VERSION:
                return Error(f"unsupported protocol version {msg.protocol!r} (supported: {PROTOCOL_VERSION})")
            self._reset_state()
            return Ok()
        if isinstance(msg, Shutdown):
            return Ok()
        if isinstance(msg, Step):
            try:
                return self._step(msg.phase, msg.text)
            except (ArithmeticError, KeyError, TypeError) as exc:
                return Error(f"evaluation failed: {type(exc).__name__}: {exc}")
        return Error(f"unexpected frame {msg!r}")

    def _step(self, phase: str, text: str):
        for rule in self.spec.rules:
            if rule.phase != phase:
                continue
            captures = rule.pattern.match(text)
            if captures is None:
                continue
            env = {**self.variables, **captures, "page": self.page}
            if rule.guard is not None and not rule.guard(env):
                continue
            if phase == "action":
                updates = {var: e(env) for var, e in rule.effects.items()}
                self.variables.update(updates)
                if rule.goto is not None:
                    self.page = rule.goto
                self.actions_fired += 1
                self.last_action = text
                return Ok()
            if phase == "postcondition":
                for fault in self.spec.faults:
                    if fault.rule == rule.name and fault.triggered(env, self.last_action, self.actions_fired):
                        return Fail(f"injected fault on {rule.name!r}")
            if rule.verdict is None or rule.verdict(env):
                return Ok()
            return Fail(f"{rule.verdict.source} is false")
        return Fail("no matching rule")


class LocalExecutor:
    """In-process executor with the same surface as ``ExecutorHandle``.

    Frames still pass through the wire encoding so behaviour matches the
    subprocess path exactly.
    """

    def __init__(self, spec: SimSpec, log: bool = False):
        self.sim = Simulator(spec)
        self.log: Optional[list] = [] if log else None
        self._closed = False

    def request(self, msg):
        if self._closed:
            raise ExecutorGone("executor handle is closed")
        reply = decode(encode(self.sim.handle(decode(encode(msg)))))
        if self.log is not None:
            self.log.append((msg, reply))
        return reply

    def reset(self) -> StepResult:
        return StepResult.from_message(self.request(Reset()))

    def send_step(self, phase, text, test_index=0, path_index=0) -> StepResult:
        return StepResult.from_message(self.request(Step(phase, text, test_index, path_index)))

    def shutdown(self):
        self._closed = True
        return 0


def run_sim(spec: SimSpec, stdin, stdout, log=None, stall_on: Optional[str] = None) -> int:
    """Serve protocol frames from ``stdin`` (binary) until shutdown or EOF."""
    sim = Simulator(spec)
    for raw in iter(stdin.readline, b""):
        line = raw.rstrip(b"\r\n")
        if not line.strip():
            continue
        try:
            msg = decode(line)
        except MalformedFrame as exc:
            msg, reply = None, Error(str(exc))
        else:
            if isinstance(msg, Step) and stall_on is not None and msg.text == stall_on:
                while True:
                    time.sleep(3600)
            reply = sim.handle(msg)
        out = encode(reply)
        stdout.write((out + "\n").encode("utf-8"))
        stdout.flush()
        if log is not None:
            req = json.loads(encode(msg)) if msg is not None else {"raw": line.decode("utf-8", "replace")}
            log.write(json.dumps({"request": req}, ensure_ascii=False) + "\n")
            log.write(json.dumps({"response": json.loads(out)}, ensure_ascii=False) + "\n")
            log.flush()
        if isinstance(msg, Shutdown):
            break
    return 0


def bundled(name: str) -> str:
    """Filesystem path of a bundled fixture (feature files and sim specs)."""
    return str(resources.files("gherkin_mbt").joinpath("fixtures", name))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sim", description="Simulated system-under-test speaking executor protocol v1.")
    parser.add_argument("--spec", required=True, help="simulator spec (JSON)")
    parser.add_argument("--log", help="append the request/response log to this file")
    parser.add_argument("--check", action="store_true", help="validate the spec and exit")
    parser.add_argument("--stall-on", metavar="TEXT",
                        help="never answer a step with this exact text (for timeout testing)")
    args = parser.parse_args(argv)

    diags = validate_spec(args.spec)
    for d in diags:
        print(f"{d.severity}: {d.message}", file=sys.stderr)
    if any(d.severity == "error" for d in diags):
        return 1
    if args.check:
        return 0
    spec = load_spec(args.spec)
    log = open(args.log, "a", encoding="utf-8") if args.log else None
    try:
        return run_sim(spec, sys.stdin.buffer, sys.stdout.buffer, log, args.stall_on)
    finally:
        if log is not None:
            log.close()


if __name__ == "__main__":
    sys.exit(main())
