import itertools
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from conftest import local, model_of
from gherkin_mbt.executor_protocol import StepResult
from gherkin_mbt.gherkin_parser import parse_feature
from gherkin_mbt.model_builder import Model, build_model
from gherkin_mbt.sim_harness import LocalExecutor, spec_from_data
from gherkin_mbt.test_engine import (
    GenConfig,
    InvalidPath,
    NoStartState,
    NotFailing,
    Outcome,
    TestCase,
    Verdict,
    enumerate_paths,
    generate_and_run,
    replay,
    shrink,
    validate_path,
)

# Transition ids in stack.feature, in file order.
PUSH0, POP0, PUSH1, POP1, PUSH2, POP2, POP3 = range(1, 8)


def brute_force_paths(model, max_len):
    """Every id sequence up to max_len that is a connected path from a start state."""
    ids = [t.id for t in model.transitions]
    found = []
    for n in range(1, max_len + 1):
        for seq in itertools.product(ids, repeat=n):
            try:
                validate_path(model, seq)
            except InvalidPath:
                continue
            found.append(seq)
    return found


def assert_valid_case(model, case):
    if case.path:
        assert model.transition(case.path[0]).origin in model.start_states
    for a, b in zip(case.path, case.path[1:]):
        assert model.transition(a).target == model.transition(b).origin


class AlwaysOk:
    def reset(self):
        return StepResult("ok")

    def send_step(self, phase, text, test_index=0, path_index=0):
        return StepResult("ok")


def test_ehealth_walk_is_forced(ehealth_model):
    rep = generate_and_run(ehealth_model, AlwaysOk(), GenConfig(seed=1, num_tests=1, max_length=4))
    (case, verdict), = rep.executed
    # Each state has exactly one way out, so the walk must alternate t1, t2.
    assert case.path == (1, 2, 1, 2)
    assert verdict == Verdict(Outcome.PASS)
    assert rep.coverage.transition_coverage == 1.0


def test_no_start_state():
    f = parse_feature('Feature: F\nScenario: S\nGiven I am on the "a"\nWhen x\nThen I should be on the "b"\n')
    m = build_model(f.scenarios).model
    with pytest.raises(NoStartState):
        generate_and_run(m, AlwaysOk(), GenConfig())


def test_enumerate_paths_ehealth(ehealth_model):
    assert enumerate_paths(ehealth_model, 2) == [TestCase((1,)), TestCase((1, 2))]
    assert enumerate_paths(ehealth_model, 0) == []
    no_start = Model(ehealth_model.states, (), ehealth_model.transitions)
    assert enumerate_paths(no_start, 3) == []


@pytest.mark.parametrize("feature, depth", [("stack.feature", 6), ("ehealth.feature", 5), ("lab_results.feature", 4)])
def test_enumerate_paths_matches_brute_force(feature, depth):
    model = model_of(feature)
    expected = sorted(brute_force_paths(model, depth), key=lambda p: (len(p), p))
    assert [c.path for c in enumerate_paths(model, depth)] == expected


def test_replay_basics(stack_model):
    ex = local("stack_sim.json")
    assert replay(stack_model, ex, TestCase()) == Verdict(Outcome.PASS)
    assert replay(stack_model, ex, TestCase((PUSH0, PUSH1, POP2, POP1))) == Verdict(Outcome.PASS)
    v = replay(stack_model, ex, TestCase((POP0,)))
    assert v.outcome is Outcome.EXHAUSTED and v.failed_at is None
    for bad in [(PUSH0, PUSH0), (PUSH1,), (99,)]:
        with pytest.raises(InvalidPath):
            replay(stack_model, ex, TestCase(bad))


def test_replay_reproduces_generated_verdicts(stack_model):
    ex = local("stack_sim.json")
    rep = generate_and_run(stack_model, ex, GenConfig(seed=7, num_tests=20, max_length=8))
    for case, verdict in rep.executed:
        again = replay(stack_model, ex, case)
        if verdict.outcome is Outcome.PASS:
            assert again == verdict
        else:
            assert again.outcome in (Outcome.PASS, Outcome.EXHAUSTED)


def test_shrink_long_counterexample(stack_model):
    ex = local("stack_sim_faulty.json")
    failing = TestCase((PUSH0, POP1, PUSH0, PUSH1, POP2, PUSH1, PUSH2, POP3))
    assert replay(stack_model, ex, failing).outcome is Outcome.POSTCONDITION_FAILED
    shrunk = shrink(stack_model, ex, failing, budget=200)
    assert shrunk.path == (PUSH0, PUSH1, PUSH2, POP3)
    assert_valid_case(stack_model, shrunk)


def test_shrink_drops_trailing_steps_after_failure(stack_model):
    ex = local("stack_sim_faulty.json")
    shrunk = shrink(stack_model, ex, TestCase((PUSH0, PUSH1, PUSH2, POP3, POP2, POP1)), budget=0)
    assert shrunk.path == (PUSH0, PUSH1, PUSH2, POP3)


def test_shrink_fixed_point(stack_model):
    ex = local("stack_sim_faulty.json")
    minimal = TestCase((PUSH0, PUSH1, PUSH2, POP3))
    assert shrink(stack_model, ex, minimal, budget=100) is minimal


def test_shrink_rejects_passing_case(stack_model):
    with pytest.raises(NotFailing):
        shrink(stack_model, local("stack_sim_faulty.json"), TestCase((PUSH0, POP1)), budget=10)


def test_shrink_respects_budget(stack_model):
    ex = local("stack_sim_faulty.json")
    failing = TestCase((PUSH0, POP1, PUSH0, PUSH1, POP2, PUSH1, PUSH2, POP3))
    assert shrink(stack_model, ex, failing, budget=0) is failing


def test_faulty_stack_failure_found_and_shrunk(stack_model):
    ex = local("stack_sim_faulty.json")
    rep = generate_and_run(stack_model, ex, GenConfig(seed=0, num_tests=100, max_length=12, shrink_budget=500))
    assert rep.first_failure is not None
    case, verdict = rep.executed[-1]
    assert verdict.outcome is Outcome.POSTCONDITION_FAILED
    assert case == rep.first_failure
    assert rep.shrunk_failure.path == (PUSH0, PUSH1, PUSH2, POP3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**64 - 1))
def test_shrink_soundness(seed):
    stack_model = model_of("stack.feature")
    ex = local("stack_sim_faulty.json")
    rep = generate_and_run(stack_model, ex, GenConfig(seed=seed, num_tests=100, max_length=12, shrink_budget=300))
    for case, _ in rep.executed:
        assert_valid_case(stack_model, case)
    if rep.first_failure is None:
        return
    original = replay(stack_model, ex, rep.first_failure)
    shrunk = replay(stack_model, ex, rep.shrunk_failure)
    assert shrunk.outcome is Outcome.POSTCONDITION_FAILED
    assert rep.shrunk_failure.path[shrunk.failed_at] == rep.first_failure.path[original.failed_at]
    assert len(rep.shrunk_failure) <= len(rep.first_failure)
    assert_valid_case(stack_model, rep.shrunk_failure)


def test_probe_off_lets_disabled_transitions_fire(stack_model):
    ex = local("stack_sim.json")
    on = generate_and_run(stack_model, ex, GenConfig(seed=3, num_tests=50, max_length=6))
    assert on.first_failure is None
    off = generate_and_run(stack_model, ex, GenConfig(seed=3, num_tests=50, max_length=6, precondition_probe=False))
    assert off.first_failure is not None
    assert POP0 in off.first_failure.path


def test_precondition_probes_gate_actions(stack_model):
    ex = local("stack_sim.json", log=True)
    generate_and_run(stack_model, ex, GenConfig(seed=11, num_tests=50, max_length=10))
    probes_this_round = []
    for req, rsp in ex.log:
        if getattr(req, "phase", None) == "precondition":
            probes_this_round.append(type(rsp).__name__)
        elif getattr(req, "phase", None) == "action":
            if req.text == "I pop an element":
                # Only one pop leaves any state, so its probe is the last one.
                assert probes_this_round and probes_this_round[-1] == "Ok"
            probes_this_round = []
        else:
            probes_this_round = []


def test_determinism_except_wall_time(lab_model):
    cfg = GenConfig(seed=5, num_tests=30, max_length=10)
    a = generate_and_run(lab_model, local("lab_results_sim.json"), cfg)
    b = generate_and_run(lab_model, local("lab_results_sim.json"), cfg)
    assert replace(a, wall_time=0) == replace(b, wall_time=0)


def test_per_test_streams_are_independent(lab_model):
    short = generate_and_run(lab_model, local("lab_results_sim.json"), GenConfig(seed=2, num_tests=5, max_length=8))
    long = generate_and_run(lab_model, local("lab_results_sim.json"), GenConfig(seed=2, num_tests=40, max_length=8))
    assert long.executed[:5] == short.executed


def test_coverage_is_monotone_in_test_count(lab_model):
    ratios = [generate_and_run(lab_model, local("lab_results_sim.json"),
                               GenConfig(seed=4, num_tests=n, max_length=6)).coverage.transition_coverage
              for n in (1, 2, 5, 10, 20, 50)]
    assert ratios == sorted(ratios)
    assert 0 < ratios[0] <= ratios[-1] <= 1


def test_exhausted_counts_as_pass():
    f = parse_feature('Feature: F\nScenario: S\nGiven I start on the "a"\nAnd the stack is not empty\n'
                      'When I pop an element\nThen I should be on the "a"\n')
    m = build_model(f.scenarios).model
    rep = generate_and_run(m, local("stack_sim.json"), GenConfig(num_tests=3))
    assert [v.outcome for _, v in rep.executed] == [Outcome.EXHAUSTED] * 3
    assert rep.failures == 0 and rep.first_failure is None
    assert rep.coverage.transition_coverage == 0.0


def _spec(rules):
    return spec_from_data({"variables": {}, "pages": ["p"], "current_page_initial": "p", "rules": rules})


def test_failing_action_is_an_executor_error(ehealth_model):
    ex = LocalExecutor(_spec([{"phase": "precondition", "pattern": "I have pending lab results"}]))
    rep = generate_and_run(ehealth_model, ex, GenConfig(num_tests=5, shrink_budget=10))
    (case, v), = rep.executed
    assert v.outcome is Outcome.EXECUTOR_ERROR
    assert v.failed_at == 0 and v.failed_step == "I click on laboratory results"
    assert rep.first_failure == case and rep.shrunk_failure is None


def test_error_reply_to_probe_is_an_executor_error(ehealth_model):
    ex = LocalExecutor(_spec([{"phase": "precondition", "pattern": "I have pending lab results",
                               "verdict": "1 // 0 == 0"}]))
    (case, v), = generate_and_run(ehealth_model, ex, GenConfig(num_tests=5)).executed
    assert v.outcome is Outcome.EXECUTOR_ERROR
    assert case.path == () and v.failed_at == 0


def test_config_and_verdict_invariants():
    for bad in [dict(num_tests=0), dict(max_length=0), dict(seed=-1), dict(seed=2**64), dict(shrink_budget=-1)]:
        with pytest.raises(ValueError):
            GenConfig(**bad)
    with pytest.raises(ValueError):
        Verdict(Outcome.PASS, failed_at=0)
    with pytest.raises(ValueError):
        Verdict(Outcome.POSTCONDITION_FAILED)
