import pytest
from hypothesis import given
from hypothesis import strategies as st

from kitchenplan.planner import oracle_client
from kitchenplan.reward_design import (
    COMPARISONS,
    FIELDS,
    REFERENCE_CONDITIONS,
    Clause,
    ConditionParseError,
    ConditionRecord,
    design_condition,
    parse_condition,
    render_reward_design,
)
from kitchenplan.subgoals import KIND_ORDER, TEMPLATES, Predicate, PredicateError, evaluate
from oracles import enumerate_transitions, synthetic_states


def test_parse_takes_the_last_condition_line():
    text = "thinking...\ncondition: near_bar ends_at 0\nrevised:\nCondition: bar_onions gains 1; holding_onion loses 1.\n"
    rec = parse_condition(text)
    assert rec.clauses == (Clause("bar_onions", "gains", 1), Clause("holding_onion", "loses", 1))


@pytest.mark.parametrize("text", [
    "no record here",
    "condition: ",
    "condition: bar_onions grows 1",
    "condition: fridge_items gains 1",
    "condition: bar_onions gains 0",
    "condition: bar_onions gains",
])
def test_parse_rejects(text):
    with pytest.raises(ConditionParseError):
        parse_condition(text)


@given(st.lists(st.tuples(st.sampled_from(sorted(FIELDS)), st.sampled_from(COMPARISONS),
                          st.integers(1, 5)), min_size=1, max_size=4))
def test_str_roundtrip(parts):
    rec = ConditionRecord(tuple(Clause(f, c, d) for f, c, d in parts))
    assert parse_condition(str(rec)) == rec


def test_prompt_lists_every_field(manual):
    prompt = render_reward_design(manual, "deliver the soup")
    assert all(f in prompt for f in FIELDS)
    assert prompt.rstrip().endswith('starts with "condition:".')


@pytest.mark.parametrize("kind", KIND_ORDER)
def test_scripted_backend_answers_reference(manual, kind):
    rec = design_condition(manual, TEMPLATES[kind][-1], oracle_client())
    assert rec == parse_condition(REFERENCE_CONDITIONS[kind])


def test_designed_conditions_match_builtin_predicates(layout, manual):
    client = oracle_client()
    table = enumerate_transitions(synthetic_states(layout, 400, 11), 200, KIND_ORDER)
    for kind in KIND_ORDER:
        rec = design_condition(manual, TEMPLATES[kind][0], client)
        for start, agent, succ in table[kind]:
            assert rec.evaluate(agent, start, [succ]) == evaluate(Predicate(kind, agent), start, [succ]), kind


def test_empty_window_is_an_error(start):
    with pytest.raises(PredicateError):
        parse_condition(REFERENCE_CONDITIONS[KIND_ORDER[0]]).evaluate(0, start, [])
