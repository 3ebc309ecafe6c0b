"""Parse the Gherkin subset used for model extraction and lint it.

Only ``Feature:``, ``Scenario:`` and ``Given``/``When``/``Then``/``And``
steps are understood. Anything else from full Gherkin (tags, backgrounds,
outlines, tables, doc strings) is rejected with a :class:`ParseError`.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence


class Keyword(str, enum.Enum):
    GIVEN = "Given"
    WHEN = "When"
    THEN = "Then"
    AND = "And"


class StepKind(str, enum.Enum):
    CONTEXT = "Context"
    ACTION = "Action"
    OUTCOME = "Outcome"


KIND_OF_KEYWORD = {
    Keyword.GIVEN: StepKind.CONTEXT,
    Keyword.WHEN: StepKind.ACTION,
    Keyword.THEN: StepKind.OUTCOME,
}

_KIND_RANK = {StepKind.CONTEXT: 0, StepKind.ACTION: 1, StepKind.OUTCOME: 2}

# Full-Gherkin constructs outside the supported subset.
_UNSUPPORTED = (
    ("Scenario Outline:", "Scenario Outline"),
    ("Scenario Template:", "Scenario Template"),
    ("Background:", "Background"),
    ("Examples:", "Examples table"),
    ("Scenarios:", "Examples table"),
    ("Rule:", "Rule"),
    ("Example:", "Example"),
    ("@", "tag"),
    ("|", "data table"),
    ('"""', "doc string"),
    ("```", "doc string"),
    ("But ", "But step"),
    ("* ", "bullet step"),
)


@dataclass(frozen=True)
class SourceLocation:
    file: str
    line: int

    def __post_init__(self):
        if self.line < 1:
            raise ValueError(f"line must be >= 1, got {self.line}")

    def __str__(self):
        return f"{self.file}:{self.line}"


class ParseError(Exception):
    def __init__(self, message: str, location: SourceLocation):
        super().__init__(f"{location}: {message}")
        self.message = message
        self.location = location


@dataclass(frozen=True)
class Step:
    keyword: Keyword
    resolved_kind: StepKind
    text: str
    location: SourceLocation


@dataclass(frozen=True)
class Scenario:
    name: str
    steps: tuple[Step, ...]
    location: SourceLocation
    feature: str = ""

    def steps_of(self, kind: StepKind) -> list[Step]:
        return [s for s in self.steps if s.resolved_kind == kind]


@dataclass(frozen=True)
class Feature:
    name: str
    scenarios: tuple[Scenario, ...]
    source: str


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    location: Optional[SourceLocation] = None

    def __str__(self):
        where = str(self.location) if self.location else "<unknown>"
        return f"{where}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class ConventionConfig:
    """Phrase templates that declare states. ``~`` marks the delimited name."""

    given_state_patterns: tuple[str, ...] = ("I am on the ~", "I start on the ~")
    then_state_patterns: tuple[str, ...] = ("I should be on the ~", "I should go to the ~")
    start_marker: str = "I start on the ~"
    state_delimiters: tuple[str, str] = ('"', '"')
    _compiled: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.given_state_patterns or not self.then_state_patterns:
            raise ValueError("state pattern lists must be nonempty")
        if _norm(self.start_marker) not in {_norm(p) for p in self.given_state_patterns}:
            raise ValueError("start_marker must be one of given_state_patterns")
        if len(self.state_delimiters) != 2 or not all(len(d) == 1 for d in self.state_delimiters):
            raise ValueError("state_delimiters must be a pair of single characters")
        for p in (*self.given_state_patterns, *self.then_state_patterns):
            if p.count("~") != 1:
                raise ValueError(f"pattern {p!r} must contain exactly one '~'")

    def regex(self, template: str) -> re.Pattern:
        rx = self._compiled.get(template)
        if rx is None:
            rx = _template_regex(template, self.state_delimiters)
            self._compiled[template] = rx
        return rx

    def is_start_marker(self, template: str) -> bool:
        return _norm(template) == _norm(self.start_marker)


def _norm(text: str) -> str:
    return " ".join(text.split()).casefold()


def _template_regex(template: str, delimiters: tuple[str, str]) -> re.Pattern:
    before, after = template.split("~")
    open_d, close_d = (re.escape(d) for d in delimiters)

    def words(part: str) -> str:
        return r"\s+".join(re.escape(w) for w in part.split())

    pieces = [words(before)]
    if before and before[-1].isspace():
        pieces.append(r"\s*")
    pieces.append(f"{open_d}([^{close_d}]*){close_d}")
    if after and after[0].isspace():
        pieces.append(r"\s*")
    pieces.append(words(after))
    return re.compile(r"\s*" + "".join(pieces) + r"\s*", re.IGNORECASE)


def match_state(text: str, templates: Iterable[str], config: ConventionConfig):
    """Return ``(template, raw_name)`` for the first template matching ``text``."""
    for template in templates:
        m = config.regex(template).fullmatch(text)
        if m:
            return template, m.group(1)
    return None


def resolve_kinds(keywords: Sequence[Keyword]) -> list[StepKind]:
    """Map keywords to kinds; ``And`` inherits from the previous non-``And`` step."""
    kinds = []
    current = None
    for kw in keywords:
        kw = Keyword(kw)
        if kw is Keyword.AND:
            if current is None:
                raise ValueError("And step without a preceding Given/When/Then")
        else:
            current = KIND_OF_KEYWORD[kw]
        kinds.append(current)
    return kinds


_STEP_KEYWORDS = [k for k in Keyword]


def parse_feature(source: str, file: str = "<string>") -> Feature:
    """Parse feature text into a :class:`Feature` with resolved step kinds."""
    feature_name = None
    scenarios: list[Scenario] = []
    cur_name = None
    cur_loc = None
    cur_steps: list[Step] = []
    last_kind = None

    def close_scenario():
        if cur_name is not None:
            scenarios.append(Scenario(cur_name, tuple(cur_steps), cur_loc, feature_name))

    for lineno, raw in enumerate(source.splitlines(), start=1):
        loc = SourceLocation(file, lineno)
        line = raw.strip()
        if not line or line.startswith("#"):
            continue

        for prefix, construct in _UNSUPPORTED:
            if line.startswith(prefix):
                raise ParseError(f"unsupported Gherkin construct: {construct}", loc)

        if line.startswith("Feature:"):
            if feature_name is not None:
                raise ParseError("more than one Feature header", loc)
            feature_name = line[len("Feature:"):].strip()
            continue

        if line.startswith("Scenario:"):
            if feature_name is None:
                raise ParseError("Scenario before Feature header", loc)
            close_scenario()
            cur_name = line[len("Scenario:"):].strip()
            cur_loc = loc
            cur_steps = []
            last_kind = None
            continue

        keyword = _leading_keyword(line)
        if keyword is None:
            # Free-form description is only allowed under the Feature header.
            if feature_name is not None and cur_name is None:
                continue
            if feature_name is None:
                raise ParseError("expected 'Feature:' header", loc)
            raise ParseError(f"unknown leading keyword in {line!r}", loc)

        if feature_name is None:
            raise ParseError("expected 'Feature:' header", loc)
        if cur_name is None:
            raise ParseError("step before any Scenario header", loc)
        text = line[len(keyword.value):].strip()
        if not text:
            raise ParseError(f"{keyword.value} step has no text", loc)
        if keyword is Keyword.AND:
            if last_kind is None:
                raise ParseError("And step without a preceding Given/When/Then", loc)
            kind = last_kind
        else:
            kind = KIND_OF_KEYWORD[keyword]
        last_kind = kind
        cur_steps.append(Step(keyword, kind, text, loc))

    if feature_name is None:
        raise ParseError("missing 'Feature:' header", SourceLocation(file, 1))
    close_scenario()
    return Feature(feature_name, tuple(scenarios), file)


def _leading_keyword(line: str) -> Optional[Keyword]:
    for kw in _STEP_KEYWORDS:
        word = kw.value
        if line.startswith(word) and (len(line) == len(word) or line[len(word)].isspace()):
            return kw
    return None


def parse_file(path) -> Feature:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_feature(fh.read(), str(path))


def render_feature(feature: Feature) -> str:
    """Canonical text form; ``parse_feature(render_feature(f))`` rebuilds ``f``
    when ``f``'s locations follow this layout."""
    lines = [f"Feature: {feature.name}".rstrip()]
    for scenario in feature.scenarios:
        lines.append(f"Scenario: {scenario.name}".rstrip())
        for step in scenario.steps:
            lines.append(f"  {step.keyword.value} {step.text}")
    return "\n".join(lines) + "\n"


def lint_conventions(feature: Feature, config: Optional[ConventionConfig] = None) -> list[Diagnostic]:
    config = config or ConventionConfig()
    diags: list[Diagnostic] = []
    seen_names: dict[str, SourceLocation] = {}

    for sc in feature.scenarios:
        if sc.name in seen_names:
            diags.append(Diagnostic(
                "warning", f"duplicate scenario name {sc.name!r} (first at line {seen_names[sc.name].line})",
                sc.location))
        else:
            seen_names[sc.name] = sc.location

        if not sc.steps:
            diags.append(Diagnostic("error", f"scenario {sc.name!r} has no steps", sc.location))
            continue

        ranks = [_KIND_RANK[s.resolved_kind] for s in sc.steps]
        if ranks != sorted(ranks):
            diags.append(Diagnostic(
                "warning", f"scenario {sc.name!r}: steps are not ordered Given, When, Then", sc.location))

        missing = []
        for kind, templates, end in (
            (StepKind.CONTEXT, config.given_state_patterns, "origin"),
            (StepKind.OUTCOME, config.then_state_patterns, "target"),
        ):
            hits = [(s, match_state(s.text, templates, config)) for s in sc.steps_of(kind)]
            hits = [(s, m) for s, m in hits if m is not None]
            if not hits:
                missing.append(end)
                continue
            for step, (_, raw) in hits:
                if not canonical_state(raw):
                    diags.append(Diagnostic("error", f"empty {end} state name", step.location))
            for step, _ in hits[1:]:
                diags.append(Diagnostic(
                    "error", f"scenario {sc.name!r} declares more than one {end} state", step.location))
        if missing:
            diags.append(Diagnostic(
                "error",
                f"scenario {sc.name!r}: no quoted {' or '.join(missing)} state found",
                sc.location))

        if not sc.steps_of(StepKind.ACTION):
            diags.append(Diagnostic("error", f"scenario {sc.name!r} has no When step", sc.location))
    return diags


def canonical_state(raw: str) -> str:
    """Identity form of a state name: trimmed, whitespace collapsed, case-folded."""
    return _norm(raw)
