import random

import pytest
from hypothesis import given, strategies as st

from mirage.errors import EmptyInput, MirageError, UndefinedCR, UndefinedDensity
from mirage.facts import GenerationConstraint, generate_fact_set, sample_input, sample_task_rules
from mirage.grade import CORRECT, INCORRECT, UNPARSEABLE, Judgment
from mirage.metrics import (TaskResult, ThresholdRecord, accuracy, change_rate, compute_thresholds,
                            deductive_density, first_correct, format_table, read_csv, report, round_half_up,
                            rows_to_csv, task_accuracy, threshold_rows, write_csv)
from mirage.rules import apply_rule
from mirage.solvers import EnumerativeSolver, NeighborSolver
from oracles import ref_change_rate, ref_round2

# published (before, after, change rate) triples
PUBLISHED_CR = [(0.50, 0.13, 0.74), (0.66, 0.15, 0.77), (0.37, 0.07, 0.81), (0.65, 0.22, 0.66)]

OK, BAD, JUNK = Judgment(CORRECT), Judgment(INCORRECT), Judgment(UNPARSEABLE, "FormatError: none")


def result(j, task="EI", extra=(), **tags):
    return TaskResult("t", "r", "LT", task, j, (1, 2, 3), list(extra), tags)


# ---------------------------------------------------------------- accuracy and CR

def test_accuracy_examples():
    assert accuracy([result(OK)] * 4) == 1.0
    assert accuracy([result(BAD)] * 4) == 0.0
    assert accuracy([result(OK)] * 37 + [result(BAD)] * 13) == 0.74
    assert accuracy([result(OK), result(JUNK)]) == 0.5
    assert accuracy([result(OK), result(JUNK)], drop_unparseable=True) == 1.0
    with pytest.raises(EmptyInput):
        accuracy([])


@pytest.mark.parametrize("bf,af,cr", PUBLISHED_CR)
def test_change_rate_reproduces_published_values(bf, af, cr):
    value = change_rate(bf, af)
    assert value == pytest.approx(ref_change_rate(bf, af))
    assert abs(value - cr) <= 0.005
    assert round_half_up(value) == ref_round2(value) == cr


def test_change_rate_identities_and_errors():
    assert change_rate(0.4, 0.4) == 0
    assert change_rate(0.4, 0.0) == 1
    with pytest.raises(UndefinedCR):
        change_rate(0.0, 0.0)
    with pytest.raises(ValueError):
        change_rate(1.2, 0.1)


@given(st.integers(0, 10 ** 6))
def test_half_up_rounding_matches_reference(cents_times_10):
    value = cents_times_10 / 1000
    assert round_half_up(value) == ref_round2(value)


def test_half_up_on_ties():
    assert round_half_up(0.125) == 0.13
    assert round_half_up(0.665) == 0.67


# ---------------------------------------------------------------- thresholds

class ScriptedSolver:
    def __init__(self, ri, ei, rule):
        self.ri, self.ei, self.rule = ri, ei, rule

    def induce(self, fs):
        return self.rule if self.ri[fs.size - 1] else None

    def deduce(self, fs, x_t):
        return apply_rule(self.rule, x_t) if self.ei[fs.size - 1] else None


def test_first_correct():
    assert first_correct([False, True, False, True]) == 2
    assert first_correct([False, False]) is None


def test_threshold_ignores_later_regressions(worked_rule, worked_facts):
    solver = ScriptedSolver([False, True, False, True, True], [True] * 5, worked_rule)
    rec = compute_thresholds(solver, worked_rule, worked_facts, (3, 4, 7), 5)
    assert (rec.ict, rec.dct) == (2, 1)
    assert rec.ri_correct == [False, True, False, True, True]


def test_threshold_absent_when_never_correct(worked_rule, worked_facts):
    rec = compute_thresholds(ScriptedSolver([False] * 5, [False] * 5, worked_rule), worked_rule, worked_facts,
                             (3, 4, 7), 5)
    assert rec.ict is None and rec.dct is None


def test_threshold_preconditions(worked_rule, worked_facts):
    with pytest.raises(ValueError):
        compute_thresholds(EnumerativeSolver(), worked_rule, worked_facts, (3, 4, 7), 6)
    with pytest.raises(ValueError):
        compute_thresholds(EnumerativeSolver(), worked_rule, worked_facts, (3, 3, 7), 5)


def test_threshold_records_solver_failures(worked_rule, worked_facts):
    class Broken:
        def induce(self, fs):
            raise MirageError("model unavailable")

        def deduce(self, fs, x_t):
            raise MirageError("model unavailable")

    rec = compute_thresholds(Broken(), worked_rule, worked_facts, (3, 4, 7), 2)
    assert rec.ict is None and len(rec.errors) == 4


@given(st.integers(0, 10 ** 9))
def test_rule_based_solver_never_deduces_late(seed):
    rng = random.Random(seed)
    rule = sample_task_rules(3, 1, rng)[0]
    x_t = sample_input(3, rng)
    fs = generate_fact_set(rule, 5, GenerationConstraint(x_t=x_t), rng)
    rec = compute_thresholds(EnumerativeSolver(), rule, fs, x_t, 5)
    if rec.ict is not None and rec.dct is not None:
        assert rec.dct <= rec.ict


def test_neighbor_solver_has_no_ict(worked_rule, worked_facts):
    rec = compute_thresholds(NeighborSolver(), worked_rule, worked_facts, (3, 4, 7), 5)
    assert rec.ict is None


def test_threshold_rows_accept_dicts():
    recs = [ThresholdRecord(1, 1, 5), ThresholdRecord(None, 2, 5), ThresholdRecord(1, 1, 5).to_dict()]
    rows = threshold_rows(recs, {"solver": "x"})
    assert rows == [{"solver": "x", "ict": 1, "dct": 1, "count": 2},
                    {"solver": "x", "ict": None, "dct": 2, "count": 1}]


# ---------------------------------------------------------------- density

def test_task_accuracy_examples():
    assert task_accuracy(result(OK, extra=[OK] * 5)) == 1.0
    assert task_accuracy(result(OK, extra=[BAD] * 5)) == 0.0
    assert task_accuracy(result(OK, extra=[OK, OK, OK, BAD, BAD])) == 0.6
    with pytest.raises(EmptyInput):
        task_accuracy(result(OK))


def test_density_examples():
    assert deductive_density([result(OK, extra=[OK] * 5)] * 3) == 1.0
    half = [result(OK, extra=[OK, BAD])] * 40 + [result(BAD, extra=[OK, OK])] * 10
    assert deductive_density(half) == 0.5
    with pytest.raises(UndefinedDensity):
        deductive_density([result(BAD, extra=[OK])] * 3)


@given(st.lists(st.tuples(st.booleans(), st.lists(st.booleans(), min_size=1, max_size=5)), min_size=1))
def test_density_bounded_by_best_task(items):
    results = [result(OK if o else BAD, extra=[OK if e else BAD for e in ex]) for o, ex in items]
    counted = [sum(ex) / len(ex) for o, ex in items if o]
    if not counted:
        with pytest.raises(UndefinedDensity):
            deductive_density(results)
        return
    d = deductive_density(results)
    assert 0 <= d <= max(counted) + 1e-12


# ---------------------------------------------------------------- reports

def test_report_grouping_and_cr():
    rows = [result(OK, task="RI", perturbed=False)] * 2 + [result(BAD, task="RI", perturbed=True)] * 2 \
        + [result(OK, task="EI", perturbed=False)] * 2
    table = report(rows, ("task",))
    assert [r["task"] for r in table] == ["EI", "RI"]
    ei, ri = table
    assert ei["accuracy"] == 1.0 and ei["cr"] is None
    assert (ri["bf"], ri["af"], ri["cr"]) == (1.0, 0.0, 1.0)
    assert ri["n"] == 4


def test_report_before_after_shape():
    results = []
    for task, (bf, af, _) in zip(["RI", "EI"], PUBLISHED_CR[:2]):
        n_bf, n_af = round(bf * 100), round(af * 100)
        for flag, hits in ((False, n_bf), (True, n_af)):
            results += [result(OK, task=task, perturbed=flag)] * hits
            results += [result(BAD, task=task, perturbed=flag)] * (100 - hits)
    table = {r["task"]: r for r in report(results, ("task",))}
    assert round_half_up(table["RI"]["cr"]) == 0.74
    assert round_half_up(table["EI"]["cr"]) == 0.77


def test_report_omits_empty_groups_and_marks_absent():
    table = report([result(JUNK)], ("task",), drop_unparseable=True)
    assert len(table) == 1 and table[0]["accuracy"] is None and table[0]["unparseable"] == 1
    text = format_table(table)
    assert "-" in text.splitlines()[2]


def test_csv_round_trip(tmp_path):
    rows = [{"scenario": "LT", "n": 3, "accuracy": 1 / 3, "cr": None, "note": 'a,"b"'},
            {"scenario": "RP:trade", "n": 10, "accuracy": 0.1, "cr": 0.7727272727272727, "note": ""}]
    path = tmp_path / "r.csv"
    write_csv(rows, path)
    back = read_csv(path)
    assert back[0] == rows[0]
    assert back[1]["accuracy"] == 0.1 and back[1]["cr"] == rows[1]["cr"]
    assert rows_to_csv(rows).endswith("\r\n")


def test_table_display():
    text = format_table([{"group": "LT", "accuracy": 0.125, "density": None}])
    assert "0.13" in text and text.splitlines()[-1].endswith("-")


def test_task_result_round_trip():
    r = TaskResult("t1", "abc", "ST", "EI", BAD, (1, 2, 3), [OK, BAD], {"dim": 3})
    assert TaskResult.from_dict(r.to_dict()) == r
    assert r.get("dim") == 3 and r.get("scenario") == "ST"
