"""Accuracy, change rate, correction thresholds, deductive density and report tables."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

from .errors import EmptyInput, MirageError, UndefinedCR, UndefinedDensity
from .facts import FactSet
from .grade import CORRECT, UNPARSEABLE, Judgment
from .rules import EquivalencePolicy, MetaRule, apply_rule, find_disagreement

RESULT_FIELDS = ("task_id", "rule_id", "scenario", "task")


@dataclass
class TaskResult:
    """One judged question, optionally with judgments on extra test points."""

    task_id: str
    rule_id: str | None
    scenario: str
    task: str
    judgment: Judgment
    x_t: tuple | None = None
    extra: list = field(default_factory=list)
    tags: dict = field(default_factory=dict)

    @property
    def correct(self) -> bool:
        return self.judgment.correct

    def get(self, key):
        if key in RESULT_FIELDS:
            return getattr(self, key)
        return self.tags.get(key)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id, "rule_id": self.rule_id, "scenario": self.scenario,
            "task": self.task, "judgment": self.judgment.to_dict(),
            "x_t": list(self.x_t) if self.x_t is not None else None,
            "extra": [j.to_dict() for j in self.extra], "tags": dict(self.tags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskResult":
        return cls(data["task_id"], data.get("rule_id"), data["scenario"], data["task"],
                   Judgment.from_dict(data["judgment"]),
                   tuple(data["x_t"]) if data.get("x_t") is not None else None,
                   [Judgment.from_dict(j) for j in data.get("extra", [])], dict(data.get("tags", {})))


def accuracy(results, drop_unparseable: bool = False) -> float:
    """Fraction judged correct.  Unparseable replies count as wrong unless dropped."""
    results = list(results)
    if drop_unparseable:
        results = [r for r in results if r.judgment.verdict != UNPARSEABLE]
    if not results:
        raise EmptyInput("accuracy of an empty result list")
    return sum(r.correct for r in results) / len(results)


def round_half_up(value: float, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def change_rate(before: float, after: float) -> float:
    """Relative accuracy drop ``(before - after) / before``."""
    for name, v in (("before", before), ("after", after)):
        if not 0 <= v <= 1:
            raise ValueError(f"{name} accuracy must lie in [0, 1], got {v}")
    if before == 0:
        raise UndefinedCR("change rate is undefined when the accuracy before perturbation is 0")
    return (before - after) / before


# ---------------------------------------------------------------- thresholds

@dataclass
class ThresholdRecord:
    """First prefix sizes at which rule induction / example inference were correct.

    ``ri_correct[k-1]`` and ``ei_correct[k-1]`` hold the judgment at prefix
    size k, so other readings of "first correct" can be recomputed.
    """

    ict: int | None
    dct: int | None
    max_n: int
    ri_correct: list = field(default_factory=list)
    ei_correct: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ict": self.ict, "dct": self.dct, "max_n": self.max_n,
                "ri_correct": list(self.ri_correct), "ei_correct": list(self.ei_correct),
                "errors": list(self.errors)}


def first_correct(flags) -> int | None:
    for k, ok in enumerate(flags, start=1):
        if ok:
            return k
    return None


def compute_thresholds(solver, rule: MetaRule, facts, x_t, max_n: int,
                       policy: EquivalencePolicy | None = None) -> ThresholdRecord:
    """Probe ``solver`` on growing fact prefixes of size 1..max_n.

    ``solver`` provides ``induce(fs)`` returning something rule-like (or
    None) and ``deduce(fs, x_t)`` returning an output vector (or None).
    Failures are recorded as incorrect at that prefix.
    """
    fs = facts if isinstance(facts, FactSet) else FactSet(rule, tuple(facts))
    if max_n < 1 or fs.size < max_n:
        raise ValueError(f"need at least max_n={max_n} facts, have {fs.size}")
    x_t = tuple(x_t)
    if x_t in set(fs.inputs[:max_n]):
        raise ValueError("the test input must be unseen")
    truth = apply_rule(rule, x_t)
    ri, ei, errors = [], [], []
    for k in range(1, max_n + 1):
        prefix = fs.prefix(k)
        try:
            induced = solver.induce(prefix)
            ri.append(induced is not None and induced.dim == rule.dim
                      and find_disagreement(induced, rule, policy, hints=[x_t]) is None)
        except MirageError as exc:
            ri.append(False)
            errors.append(f"RI k={k}: {type(exc).__name__}: {exc}")
        try:
            answer = solver.deduce(prefix, x_t)
            ei.append(answer is not None and tuple(answer) == truth)
        except MirageError as exc:
            ei.append(False)
            errors.append(f"EI k={k}: {type(exc).__name__}: {exc}")
    return ThresholdRecord(first_correct(ri), first_correct(ei), max_n, ri, ei, errors)


# ---------------------------------------------------------------- density

def task_accuracy(result: TaskResult) -> float:
    """Mean correctness over a task's extra test points."""
    if not result.extra:
        raise EmptyInput(f"task {result.task_id} has no extra test points")
    return sum(j.correct for j in result.extra) / len(result.extra)


def deductive_density(results) -> float:
    """Mean per-task accuracy over the tasks whose origin question was answered correctly."""
    counted = [task_accuracy(r) for r in results if r.correct]
    if not counted:
        raise UndefinedDensity("no task has a correct origin answer")
    return sum(counted) / len(counted)


# ---------------------------------------------------------------- reports

REPORT_COLUMNS = ("n", "accuracy", "unparseable", "bf", "af", "cr", "density")


def _sort_key(values):
    out = []
    for v in values:
        if v is None:
            out.append((2, 0, ""))
        elif isinstance(v, (bool, int, float)):
            out.append((0, float(v), ""))
        else:
            out.append((1, 0, str(v)))
    return tuple(out)


def report(results, grouping=(), drop_unparseable: bool = False) -> list[dict]:
    """One row per non-empty group, sorted by group values.

    Columns after the grouping keys: ``n``, ``accuracy``, ``unparseable``;
    ``bf``/``af``/``cr`` when the group mixes perturbed and clean tasks;
    ``density`` when tasks carry extra test points and it is defined.
    """
    groups = {}
    for r in results:
        key = tuple(r.get(g) for g in grouping)
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups, key=_sort_key):
        members = groups[key]
        row = dict(zip(grouping, key))
        row["n"] = len(members)
        try:
            row["accuracy"] = accuracy(members, drop_unparseable)
        except EmptyInput:
            row["accuracy"] = None
        row["unparseable"] = sum(r.judgment.verdict == UNPARSEABLE for r in members)
        clean = [r for r in members if not r.tags.get("perturbed")]
        dirty = [r for r in members if r.tags.get("perturbed")]
        row["bf"] = row["af"] = row["cr"] = None
        if clean and dirty:
            row["bf"], row["af"] = accuracy(clean), accuracy(dirty)
            try:
                row["cr"] = change_rate(row["bf"], row["af"])
            except UndefinedCR:
                pass
        row["density"] = None
        with_extra = [r for r in members if r.extra]
        if with_extra:
            try:
                row["density"] = deductive_density(with_extra)
            except UndefinedDensity:
                pass
        rows.append(row)
    return rows


def threshold_rows(records, labels=None) -> list[dict]:
    """Distribution of (ICT, DCT) pairs, one row per distinct pair.

    ``records`` may be ThresholdRecords or their dict form.
    """
    counts = {}
    for rec in records:
        pair = (rec["ict"], rec["dct"]) if isinstance(rec, dict) else (rec.ict, rec.dct)
        counts[pair] = counts.get(pair, 0) + 1
    rows = []
    for ict, dct in sorted(counts, key=_sort_key):
        row = dict(labels or {})
        row.update({"ict": ict, "dct": dct, "count": counts[(ict, dct)]})
        rows.append(row)
    return rows


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


_INT = re.compile(r"-?\d+")


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("True", "False"):
        return text == "True"
    if _INT.fullmatch(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def rows_to_csv(rows, columns=None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(rows, path, columns=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows, columns))


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        return [dict(zip(header, map(_parse_cell, line))) for line in reader]


def _display(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{round_half_up(value, 2):.2f}"
    return str(value)


def format_table(rows, columns=None) -> str:
    """Aligned plain-text table; fractions shown to 2 decimals, absent values as '-'."""
    columns = list(columns or (rows[0].keys() if rows else []))
    cells = [[_display(row.get(c)) for c in columns] for row in rows]
    widths = [max([len(c)] + [len(line[i]) for line in cells]) for i, c in enumerate(columns)]
    out = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    out.append("  ".join("-" * w for w in widths))
    for line in cells:
        out.append("  ".join(v.ljust(w) for v, w in zip(line, widths)).rstrip())
    return "\n".join(out) + "\n"


__all__ = [
    "TaskResult", "accuracy", "change_rate", "round_half_up", "ThresholdRecord", "compute_thresholds",
    "first_correct", "task_accuracy", "deductive_density", "report", "threshold_rows", "rows_to_csv",
    "write_csv", "read_csv", "format_table", "CORRECT",
]
