"""Assemble a finite-state model out of convention-following scenarios.

Each scenario contributes one transition from the page named by its
``Given`` step to the page named by its ``Then`` step. Scenarios are glued
together wherever their state names agree.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

from .gherkin_parser import (
    ConventionConfig,
    Feature,
    Scenario,
    SourceLocation,
    Step,
    StepKind,
    canonical_state,
    match_state,
)


@dataclass(frozen=True)
class StateName:
    canonical: str
    display: str = field(compare=False)

    @classmethod
    def of(cls, raw: str) -> "StateName":
        canonical = canonical_state(raw)
        if not canonical:
            raise ValueError("state name is empty")
        return cls(canonical, " ".join(raw.split()))

    def __str__(self):
        return self.display


@dataclass(frozen=True)
class Provenance:
    feature: str
    scenario: str
    location: SourceLocation


@dataclass(frozen=True)
class Transition:
    id: int
    origin: StateName
    target: StateName
    preconditions: tuple[str, ...]
    actions: tuple[str, ...]
    postconditions: tuple[str, ...]
    provenance: Provenance

    @property
    def name(self) -> str:
        return self.provenance.scenario

    def same_content(self, other: "Transition") -> bool:
        return (self.origin, self.target, self.preconditions, self.actions, self.postconditions) == (
            other.origin, other.target, other.preconditions, other.actions, other.postconditions)


@dataclass(frozen=True)
class Model:
    states: tuple[StateName, ...] = ()
    start_states: tuple[StateName, ...] = ()
    transitions: tuple[Transition, ...] = ()

    def __post_init__(self):
        known = set(self.states)
        if len(known) != len(self.states):
            raise ValueError("duplicate state in model")
        if not set(self.start_states) <= known:
            raise ValueError("start state not in state set")
        ids = set()
        for t in self.transitions:
            if t.origin not in known or t.target not in known:
                raise ValueError(f"transition {t.id} has an endpoint outside the state set")
            if not t.actions:
                raise ValueError(f"transition {t.id} has no actions")
            if t.id in ids:
                raise ValueError(f"duplicate transition id {t.id}")
            ids.add(t.id)

    @cached_property
    def _by_id(self) -> dict[int, Transition]:
        return {t.id: t for t in self.transitions}

    @cached_property
    def _outgoing(self) -> dict[StateName, tuple[Transition, ...]]:
        out: dict[StateName, list[Transition]] = {s: [] for s in self.states}
        for t in sorted(self.transitions, key=lambda t: t.id):
            out[t.origin].append(t)
        return {s: tuple(ts) for s, ts in out.items()}

    def transition(self, tid: int) -> Transition:
        return self._by_id[tid]

    def has_transition(self, tid: int) -> bool:
        return tid in self._by_id

    def outgoing(self, state: StateName) -> tuple[Transition, ...]:
        """Transitions leaving ``state``, ordered by id."""
        return self._outgoing.get(state, ())

    def state(self, canonical: str) -> StateName:
        for s in self.states:
            if s.canonical == canonical:
                return s
        raise KeyError(canonical)


class BuildErrorKind(str, enum.Enum):
    NO_STATES = "NoStates"
    NO_TRANSITION = "NoTransition"


@dataclass(frozen=True)
class BuildError:
    provenance: Provenance
    kind: BuildErrorKind
    message: str

    def __str__(self):
        return f"{self.provenance.location}: error: {self.message} (scenario {self.provenance.scenario!r})"


@dataclass(frozen=True)
class BuildReport:
    model: Model
    errors: tuple[BuildError, ...] = ()


def _find_state_step(steps: Iterable[Step], templates, config):
    for step in steps:
        hit = match_state(step.text, templates, config)
        if hit is not None and canonical_state(hit[1]):
            return step, hit
    return None


def extract_origin_state(scenario: Scenario, config: Optional[ConventionConfig] = None):
    """Return ``(StateName, is_start)`` from the first state-declaring Context step, or None."""
    config = config or ConventionConfig()
    found = _find_state_step(scenario.steps_of(StepKind.CONTEXT), config.given_state_patterns, config)
    if found is None:
        return None
    _, (template, raw) = found
    return StateName.of(raw), config.is_start_marker(template)


def extract_target_state(scenario: Scenario, config: Optional[ConventionConfig] = None):
    config = config or ConventionConfig()
    found = _find_state_step(scenario.steps_of(StepKind.OUTCOME), config.then_state_patterns, config)
    if found is None:
        return None
    return StateName.of(found[1][1])


def _conditions(scenario, kind, templates, config) -> list[str]:
    steps = scenario.steps_of(kind)
    found = _find_state_step(steps, templates, config)
    skip = found[0] if found else None
    return [s.text for s in steps if s is not skip]


def extract_preconditions(scenario: Scenario, config: Optional[ConventionConfig] = None) -> list[str]:
    config = config or ConventionConfig()
    return _conditions(scenario, StepKind.CONTEXT, config.given_state_patterns, config)


def extract_postconditions(scenario: Scenario, config: Optional[ConventionConfig] = None) -> list[str]:
    config = config or ConventionConfig()
    return _conditions(scenario, StepKind.OUTCOME, config.then_state_patterns, config)


def extract_actions(scenario: Scenario) -> list[str]:
    return [s.text for s in scenario.steps_of(StepKind.ACTION)]


def build_model(scenarios: Sequence[Scenario], config: Optional[ConventionConfig] = None) -> BuildReport:
    """Run the scenario-to-transition algorithm over ``scenarios`` in order.

    Every scenario yields either one transition or one error entry. States
    are merged by canonical name; the first spelling seen is kept for
    display, and a start marking, once given, is never removed.
    """
    config = config or ConventionConfig()
    states: dict[StateName, StateName] = {}
    starts: set[StateName] = set()
    transitions: list[Transition] = []
    errors: list[BuildError] = []

    def add_state_if_new(s: StateName) -> StateName:
        return states.setdefault(s, s)

    for sc in scenarios:
        prov = Provenance(sc.feature, sc.name, sc.location)
        origin = extract_origin_state(sc, config)
        target = extract_target_state(sc, config)
        if origin is None or target is None:
            missing = [end for end, v in (("origin", origin), ("target", target)) if v is None]
            errors.append(BuildError(
                prov, BuildErrorKind.NO_STATES,
                f"Unable to extract states from test scenario (missing {' and '.join(missing)})"))
            continue

        os_, is_start = origin
        os_ = add_state_if_new(os_)
        if is_start:
            starts.add(os_)
        ts = add_state_if_new(target)

        pre = extract_preconditions(sc, config)
        post = extract_postconditions(sc, config)
        actions = extract_actions(sc)
        if not actions:
            errors.append(BuildError(
                prov, BuildErrorKind.NO_TRANSITION, "Unable to extract transition from test scenario"))
            continue
        transitions.append(Transition(
            len(transitions) + 1, os_, ts, tuple(pre), tuple(actions), tuple(post), prov))

    ordered = tuple(states)
    model = Model(ordered, tuple(s for s in ordered if s in starts), tuple(transitions))
    return BuildReport(model, tuple(errors))


def scenarios_of(features: Iterable[Feature]) -> list[Scenario]:
    return [sc for f in features for sc in f.scenarios]
