import os
import random

import pytest
from hypothesis import given, strategies as st

from mirage.errors import OutOfRange, TemplateMismatch, UnsupportedTransfer
from mirage.facts import generate_fact_set, perturb_fact_set
from mirage.render import (EI, RI, RP_TEMPLATES, Scenario, digits_to_letters, letters_to_digits,
                           render_arithmetic_probe, render_cross_scenario, render_question, scaffold_for)
from mirage.rules import MetaRule, apply_rule, sample_rule

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")
SCENARIOS = ["LT", "RP:trade", "CG", "ST"]


def golden_name(scenario, task):
    return f"worked_{scenario.replace(':', '_')}_{task}.txt"


def render_worked(fs, scenario, task, **kw):
    x_t = (3, 4, 7) if task == EI else None
    return render_question(fs, task, scenario, x_t, rng=random.Random(0), **kw)


@pytest.mark.parametrize("task", [RI, EI])
@pytest.mark.parametrize("scenario", SCENARIOS)
def test_golden_prompts(worked_facts, scenario, task):
    q = render_worked(worked_facts, scenario, task)
    path = os.path.join(GOLDEN, golden_name(scenario, task))
    if os.environ.get("MIRAGE_UPDATE_GOLDEN"):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(q.prompt)
    with open(path, encoding="utf-8", newline="") as fh:
        assert q.prompt == fh.read()


def test_worked_lt_expectations(worked_facts):
    ei = render_worked(worked_facts, "LT", EI)
    assert "Question: Input: [3, 4, 7]" in ei.prompt
    assert ei.expected == (11, 11, 7)
    assert ei.expected_text == "Answer: [11, 11, 7]"
    ri = render_worked(worked_facts, "LT", RI)
    assert ri.expected == "[A, B, C] -> [B+C, B+C, C]"


def test_scenario_surface_forms(worked_facts):
    assert "Output: (10, 10, 7)" in render_worked(worked_facts, "CG", EI).prompt
    assert "3 chairs, 3 tables, 7 pens" in render_worked(worked_facts, "RP:trade", EI).prompt
    st_q = render_worked(worked_facts, "ST", EI)
    assert "Question: Input: [d, e, h]" in st_q.prompt
    assert st_q.expected == ("eh", "eh", "h")
    cg = render_worked(worked_facts, "CG", RI)
    assert "def f(A, B, C):" in cg.expected_text and "return A, B, C" in cg.expected_text


def test_rendering_is_deterministic(worked_facts):
    for scenario in SCENARIOS:
        a = render_question(worked_facts, EI, scenario, (3, 4, 7), shots=2, rng=random.Random(5))
        b = render_question(worked_facts, EI, scenario, (3, 4, 7), shots=2, rng=random.Random(5))
        assert a.prompt == b.prompt


def test_shots_only_prepend(worked_facts):
    plain = render_worked(worked_facts, "LT", EI)
    shot = render_question(worked_facts, EI, "LT", (3, 4, 7), shots=5, rng=random.Random(0))
    assert shot.prompt.count("Example ") == 5
    head, _, tail = shot.prompt.partition("Now solve the following task.\n")
    assert tail == plain.prompt
    assert shot.expected == plain.expected


def test_exemplars_use_other_rules(worked_facts):
    shot = render_question(worked_facts, RI, "LT", shots=5, rng=random.Random(1))
    head = shot.prompt.split("Now solve the following task.")[0]
    assert "Rule: [A, B, C] -> [B+C, B+C, C]" not in head


def test_precondition_errors(worked_facts):
    with pytest.raises(ValueError):
        render_question(worked_facts, EI, "LT")
    with pytest.raises(ValueError):
        render_question(worked_facts, RI, "LT", (3, 4, 7))
    with pytest.raises(ValueError):
        render_question(worked_facts, EI, "LT", (3, 3, 7))
    with pytest.raises(ValueError):
        Scenario("RP", "picnic")


def test_capacity_limits():
    rng = random.Random(0)
    rule = sample_rule(9, rng)
    fs = generate_fact_set(rule, 3, rng=rng)
    with pytest.raises(TemplateMismatch):
        render_question(fs, RI, "RP:trade", rng=rng)
    rule = sample_rule(8, rng)
    fs = generate_fact_set(rule, 3, rng=rng)
    q = render_question(fs, RI, "LT", rng=rng)
    assert "[A, B, C, D, E, F, G, H]" in q.prompt
    for name in RP_TEMPLATES:
        assert len(RP_TEMPLATES[name].objects) >= 8


def test_cross_scenario(worked_facts):
    q = render_cross_scenario("LT", "CG", worked_facts, (3, 4, 7), rng=random.Random(0))
    assert "Fact 1: Input: [3, 3, 7]" in q.prompt and "Question: Input: f(3, 4, 7)" in q.prompt
    assert q.expected == (11, 11, 7)
    same = render_cross_scenario("LT", "LT", worked_facts, (3, 4, 7), rng=random.Random(0))
    assert same.prompt == render_worked(worked_facts, "LT", EI).prompt
    for a, b in [("ST", "LT"), ("LT", "ST")]:
        with pytest.raises(UnsupportedTransfer):
            render_cross_scenario(a, b, worked_facts, (3, 4, 7))


@given(st.sampled_from(["LT", "RP:diet", "CG"]), st.sampled_from(["LT", "RP:magic", "CG"]), st.integers(0, 10 ** 6))
def test_cross_scenario_answer_is_invariant(a, b, seed):
    rng = random.Random(seed)
    rule = sample_rule(3, rng)
    fs = generate_fact_set(rule, 4, rng=rng)
    x_t = next(x for x in [(9, 8, 7), (1, 2, 3)] if x not in fs.inputs)
    q = render_cross_scenario(a, b, fs, x_t, rng=rng)
    assert q.expected == apply_rule(rule, x_t)


def test_perturbed_fact_visible_in_string_mode(worked_facts):
    p = perturb_fact_set(worked_facts, random.Random(2))
    lt = render_question(p, RI, "LT", rng=random.Random(0)).prompt
    st_ = render_question(p, RI, "ST", rng=random.Random(0)).prompt
    clean = render_question(worked_facts, RI, "ST", rng=random.Random(0)).prompt
    assert st_ != clean and lt != render_question(worked_facts, RI, "LT", rng=random.Random(0)).prompt


def test_letters():
    assert digits_to_letters((3, 4, 7)) == ("d", "e", "h")
    assert digits_to_letters((0, 0, 0)) == ("a", "a", "a")
    with pytest.raises(OutOfRange):
        digits_to_letters((10,))
    with pytest.raises(OutOfRange):
        letters_to_digits(("k",))


@given(st.lists(st.integers(0, 9), min_size=1, max_size=8))
def test_letter_round_trip(v):
    assert letters_to_digits(digits_to_letters(v)) == tuple(v)


def test_probes():
    assert render_arithmetic_probe("map", operands=(3, 4, 2)).expected == 14
    assert render_arithmetic_probe("add", operands=(3, 4, 7)).expected == 14
    with pytest.raises(OutOfRange):
        render_arithmetic_probe("map", operands=(0, 4, 2))
    with pytest.raises(OutOfRange):
        render_arithmetic_probe("add", operands=(12, 1))
    rng = random.Random(0)
    for _ in range(200):
        q = render_arithmetic_probe(rng.choice(["map", "add"]), rng)
        meta = q.metadata
        digits = meta.get("digits") or [meta["k"], meta["x"], meta["b"]]
        assert all(0 <= v <= 9 for v in digits)


def test_scaffolds():
    assert scaffold_for("IO", RI) is None
    assert "step by step" in scaffold_for("CoT", EI)
    assert scaffold_for("SC", RI) == scaffold_for("CoT", RI)
    assert "Rule:" in scaffold_for("ID", EI)


def test_map_rule_string_expected():
    fs = generate_fact_set(MetaRule("map", (0,), (0,), 3, k=2, b=3), 3, rng=random.Random(0))
    q = render_question(fs, RI, "ST", rng=random.Random(0))
    assert q.expected_text == "Rule: ABC -> [AAd, B, C]"
