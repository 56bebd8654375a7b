"""Prompt rendering for the four task scenarios.

Every prompt is assembled from the same blocks: an optional story line
(real-world scenario), an instruction, the reply format stanza, the fact
lines, and either a closing request (rule induction) or the question line
(example inference).  Few-shot exemplars are prepended as a separate block.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import OutOfRange, TemplateMismatch, UnsupportedTransfer
from .facts import FactSet, generate_fact_set, sample_test_inputs
from .rules import (LETTERS, VARIABLES, MetaRule, apply_rule, apply_rule_string, letter,
                    rule_text, sample_rule, slot_expressions, variable)

RI, EI = "RI", "EI"
TASKS = (RI, EI)
SCENARIO_KINDS = ("LT", "RP", "CG", "ST")
EXPR_SLOT = "<<expression>>"
NAMES = ("Alex", "Sam", "Jordan", "Taylor", "Morgan", "Casey", "Riley", "Jamie")


@dataclass(frozen=True)
class RpTemplate:
    name: str
    task_type: str
    story: str
    objects: tuple

    def __post_init__(self):
        if len(set(self.objects)) != len(self.objects):
            raise ValueError(f"template {self.name} repeats an object noun")


RP_TEMPLATES = {
    t.name: t for t in (
        RpTemplate("trade", "trade", "{name} trades items at the market, always following the same rule.",
                   ("chairs", "tables", "pens", "lamps", "books", "cups", "hats", "rugs")),
        RpTemplate("diet", "diet adjustment", "{name} revises a diet plan by a nutritionist's fixed rule.",
                   ("apples", "bananas", "oranges", "eggs", "carrots", "grapes", "peaches", "walnuts")),
        RpTemplate("magic", "card trick", "{name} performs a card trick that always changes the hand the same way.",
                   ("Spade 5s", "Jokers", "Hearts 6s", "Club Kings", "Diamond 2s", "Spade Aces",
                    "Heart Queens", "Club 9s")),
        RpTemplate("invest", "portfolio adjustment", "{name} rebalances a portfolio according to fixed criteria.",
                   ("stocks", "bonds", "funds", "options", "futures", "bills", "notes", "warrants")),
        RpTemplate("course", "schedule adjustment", "{name} reorganizes a weekly class schedule with a fixed rule.",
                   ("math", "science", "history", "art", "music", "chemistry", "biology", "geography")),
    )
}


@dataclass(frozen=True)
class Scenario:
    kind: str
    template: str | None = None

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == "RP":
            if self.template not in RP_TEMPLATES:
                raise ValueError(f"real-world scenario needs one of {sorted(RP_TEMPLATES)}, got {self.template!r}")
        elif self.template is not None:
            raise ValueError(f"scenario {self.kind} takes no template")

    @classmethod
    def parse(cls, text) -> "Scenario":
        if isinstance(text, Scenario):
            return text
        kind, _, template = str(text).partition(":")
        kind = kind.upper()
        if kind == "RP":
            return cls(kind, template or "trade")
        return cls(kind)

    @property
    def string_mode(self) -> bool:
        return self.kind == "ST"

    @property
    def rp(self) -> RpTemplate | None:
        return RP_TEMPLATES.get(self.template)

    @property
    def subject(self) -> str:
        return {"LT": "list transformation", "CG": "function", "ST": "string transformation"}.get(
            self.kind) or self.rp.task_type

    def __str__(self):
        return f"RP:{self.template}" if self.kind == "RP" else self.kind


LT, CG, ST = Scenario("LT"), Scenario("CG"), Scenario("ST")


@dataclass(frozen=True)
class RenderedQuestion:
    prompt: str
    scenario: Scenario
    task: str
    rule: MetaRule | None
    expected: object
    expected_text: str
    test_input: tuple | None = None
    shots: int = 0
    fact_scenario: Scenario | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def rule_id(self) -> str | None:
        return self.rule.rule_id if self.rule is not None else None


# ---------------------------------------------------------------- value formatting

def digits_to_letters(v) -> tuple:
    out = []
    for value in v:
        if not 0 <= value <= 9:
            raise OutOfRange(f"{value} has no letter (digits 0-9 only)")
        out.append(letter(value))
    return tuple(out)


def letters_to_digits(v) -> tuple:
    out = []
    for ch in v:
        if len(ch) != 1 or ch not in LETTERS:
            raise OutOfRange(f"{ch!r} is not a single letter a-j")
        out.append(LETTERS.index(ch))
    return tuple(out)


def _st_component(s: str) -> str:
    return s if s else "''"


def format_input(x, scenario: Scenario) -> str:
    if scenario.kind == "LT":
        return "[" + ", ".join(map(str, x)) + "]"
    if scenario.kind == "CG":
        return "f(" + ", ".join(map(str, x)) + ")"
    if scenario.kind == "ST":
        return "[" + ", ".join(_st_component(s) for s in x) + "]"
    return ", ".join(f"{v} {obj}" for v, obj in zip(x, scenario.rp.objects))


def format_output(y, scenario: Scenario) -> str:
    if scenario.kind == "CG":
        return "(" + ", ".join(map(str, y)) + ")"
    return format_input(y, scenario)


def string_fact(fs: FactSet, index: int) -> tuple:
    """The string-scenario view of one fact: (input letters, output strings)."""
    fact = fs.facts[index]
    xs = digits_to_letters(fact.x)
    ys = list(apply_rule_string(fs.rule, xs))
    if index == fs.perturbed_index:
        truth = apply_rule(fs.rule, fact.x)
        for j, (got, want) in enumerate(zip(fact.y, truth)):
            if got != want:
                ys[j] = letter(got)
    return xs, tuple(ys)


def fact_line(i: int, x, y, scenario: Scenario) -> str:
    return f"Fact {i}: Input: {format_input(x, scenario)}  Output: {format_output(y, scenario)}"


def fact_lines(fs: FactSet, scenario: Scenario) -> list[str]:
    lines = []
    for i, fact in enumerate(fs.facts):
        if scenario.string_mode:
            x, y = string_fact(fs, i)
        else:
            x, y = fact.x, fact.y
        lines.append(fact_line(i + 1, x, y, scenario))
    return lines


def question_line(x_t, scenario: Scenario) -> str:
    x = digits_to_letters(x_t) if scenario.string_mode else x_t
    return f"Question: Input: {format_input(x, scenario)}"


# ---------------------------------------------------------------- stanzas

def _variables(dim: int) -> list[str]:
    return [variable(j) for j in range(dim)]


def rule_stanza(slots: list[str], scenario: Scenario) -> str:
    """Rule text in the scenario's reply format, with the given slot expressions."""
    names = _variables(len(slots))
    if scenario.kind == "LT":
        return f"Rule: [{', '.join(names)}] -> [{', '.join(slots)}]"
    if scenario.kind == "ST":
        return f"Rule: {''.join(names)} -> [{', '.join(slots)}]"
    if scenario.kind == "CG":
        lhs = ", ".join(names)
        return f"Rule:\ndef f({lhs}):\n    {lhs} = {', '.join(slots)}\n    return {lhs}"
    objs = scenario.rp.objects
    before = ", ".join(f"{n} {o}" for n, o in zip(names, objs))
    after = ", ".join(f"{s} {o}" for s, o in zip(slots, objs))
    return f"Rule: If there are {before}. After the {scenario.rp.task_type}, there are {after}."


def answer_stanza(values, scenario: Scenario) -> str:
    values = [str(v) for v in values]
    if scenario.kind in ("LT", "ST"):
        return f"Answer: [{', '.join(values)}]"
    if scenario.kind == "CG":
        return f"Answer: {', '.join(values)}"
    return "Answer: " + ", ".join(f"{v} {o}" for v, o in zip(values, scenario.rp.objects)) + "."


def expected_answer(rule: MetaRule, x_t, scenario: Scenario) -> tuple:
    if scenario.string_mode:
        return apply_rule_string(rule, digits_to_letters(x_t))
    return apply_rule(rule, x_t)


def expected_rule_text(rule: MetaRule, scenario: Scenario) -> str:
    return rule_stanza(slot_expressions(rule, scenario.string_mode), scenario)


def expected_answer_text(answer, scenario: Scenario) -> str:
    if scenario.string_mode:
        answer = [_st_component(s) for s in answer]
    return answer_stanza(answer, scenario)


def _check_capacity(dim: int, scenario: Scenario):
    if dim > len(VARIABLES):
        raise TemplateMismatch(f"dimension {dim} exceeds the {len(VARIABLES)} variable letters")
    if scenario.kind == "RP" and dim > len(scenario.rp.objects):
        raise TemplateMismatch(
            f"template {scenario.template} has {len(scenario.rp.objects)} objects, dimension is {dim}")


def _header(task: str, scenario: Scenario, dim: int) -> list[str]:
    if task == RI:
        instruction = f"Work out the rule of the {scenario.subject} from the facts below."
        stanza = rule_stanza([EXPR_SLOT] * dim, scenario)
    else:
        instruction = f"Use the rule of the {scenario.subject} shown in the facts below to answer the question."
        stanza = answer_stanza([EXPR_SLOT] * dim, scenario)
    return [instruction, "Reply strictly in the following format:", stanza]


def _story(scenario: Scenario, name: str) -> list[str]:
    if scenario.kind != "RP":
        return []
    return [scenario.rp.story.format(name=name)
            + f" Each fact lists the counts before (Input) and after (Output) the {scenario.rp.task_type}."]


def _body(fs, task, fact_scenario, question_scenario, test_input) -> list[str]:
    lines = fact_lines(fs, fact_scenario)
    if task == RI:
        lines.append(f"Now write the rule of the {question_scenario.subject} that produces these facts.")
    else:
        lines.append(question_line(test_input, question_scenario))
    return lines


def _exemplars(fs, task, scenario, shots, rng) -> list[str]:
    taken = {fs.rule}
    lines = ["Here are some solved examples."]
    for s in range(shots):
        while True:
            rule = sample_rule(fs.dim, rng)
            if rule not in taken:
                break
        taken.add(rule)
        ex = generate_fact_set(rule, fs.size, rng=rng)
        lines.append(f"Example {s + 1}:")
        if task == RI:
            lines.extend(_body(ex, task, scenario, scenario, None))
            lines.append(expected_rule_text(rule, scenario))
        else:
            x_t = sample_test_inputs(ex.inputs[0], None, 1, ex.inputs, rng)[0]
            lines.extend(_body(ex, task, scenario, scenario, x_t))
            lines.append(expected_answer_text(expected_answer(rule, x_t, scenario), scenario))
        lines.append("")
    lines.append("Now solve the following task.")
    return lines


def _compose(fs, task, fact_scenario, question_scenario, test_input, shots, rng, scaffold, metadata):
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if (task == EI) != (test_input is not None):
        raise ValueError("a test input is required for example inference and only for it")
    _check_capacity(fs.dim, fact_scenario)
    _check_capacity(fs.dim, question_scenario)
    rng = rng or random.Random(0)
    name = rng.choice(NAMES)
    lines = []
    if shots:
        lines.extend(_exemplars(fs, task, question_scenario, shots, rng))
    lines.extend(_story(fact_scenario, name))
    lines.extend(_header(task, question_scenario, fs.dim))
    if test_input is not None:
        test_input = tuple(test_input)
        if test_input in set(fs.inputs):
            raise ValueError("the test input must not be one of the observed inputs")
    lines.extend(_body(fs, task, fact_scenario, question_scenario, test_input))
    if scaffold:
        lines.append(scaffold)
    if task == RI:
        expected = rule_text(fs.rule, question_scenario.string_mode)
        expected_text = expected_rule_text(fs.rule, question_scenario)
    else:
        expected = expected_answer(fs.rule, test_input, question_scenario)
        expected_text = expected_answer_text(expected, question_scenario)
    meta = {"dim": fs.dim, "size": fs.size, "perturbed": fs.perturbed}
    meta.update(metadata or {})
    return RenderedQuestion(
        prompt="\n".join(lines) + "\n",
        scenario=question_scenario,
        task=task,
        rule=fs.rule,
        expected=expected,
        expected_text=expected_text,
        test_input=test_input,
        shots=shots,
        fact_scenario=fact_scenario,
        metadata=meta,
    )


def render_question(fs: FactSet, task: str, scenario, test_input=None, shots: int = 0,
                    rng: random.Random | None = None, scaffold: str | None = None,
                    metadata: dict | None = None) -> RenderedQuestion:
    """Render one rule-induction or example-inference question."""
    scenario = Scenario.parse(scenario)
    return _compose(fs, task, scenario, scenario, test_input, shots, rng, scaffold, metadata)


def render_cross_scenario(fs_scenario, test_scenario, fs: FactSet, test_input,
                          rng: random.Random | None = None, scaffold: str | None = None,
                          metadata: dict | None = None) -> RenderedQuestion:
    """Facts in one numeric scenario, the question in another."""
    fs_scenario, test_scenario = Scenario.parse(fs_scenario), Scenario.parse(test_scenario)
    if fs_scenario.string_mode or test_scenario.string_mode:
        raise UnsupportedTransfer("string transformations use different operations and cannot be transferred")
    return _compose(fs, EI, fs_scenario, test_scenario, test_input, 0, rng, scaffold, metadata)


# ---------------------------------------------------------------- method scaffolds

SCAFFOLDS = {
    "IO": {RI: None, EI: None},
    "ID": {RI: None,
           EI: "First write the rule on a line starting with 'Rule:', then apply it to the question "
               "and end with the Answer line."},
    "CoT": {RI: "Think step by step, then end with the Rule line in the required format.",
            EI: "Think step by step, then end with the Answer line in the required format."},
}
SCAFFOLDS["SC"] = SCAFFOLDS["CoT"]


def scaffold_for(method: str, task: str) -> str | None:
    return SCAFFOLDS.get(method, SCAFFOLDS["IO"])[task]


# ---------------------------------------------------------------- arithmetic probes

def render_arithmetic_probe(kind: str, rng: random.Random | None = None, operands=None) -> RenderedQuestion:
    """A bare single-digit calculation (``k*x+b`` or a digit sum)."""
    rng = rng or random.Random(0)
    kind = kind.lower()
    if kind == "map":
        k, x, b = operands or (rng.randint(1, 9), rng.randint(0, 9), rng.randint(0, 9))
        if not (1 <= k <= 9 and 0 <= x <= 9 and 0 <= b <= 9):
            raise OutOfRange("map probe operands must be single digits with k >= 1")
        question, value = f"Compute {k} * {x} + {b}.", k * x + b
        ops = {"k": k, "x": x, "b": b}
    elif kind == "add":
        digits = tuple(operands or [rng.randint(0, 9) for _ in range(rng.randint(2, 4))])
        if len(digits) < 2 or not all(0 <= v <= 9 for v in digits):
            raise OutOfRange("add probe needs at least two single digits")
        question, value = f"Compute {' + '.join(map(str, digits))}.", sum(digits)
        ops = {"digits": list(digits)}
    else:
        raise ValueError(f"probe kind must be 'map' or 'add', got {kind!r}")
    prompt = "\n".join([question, "Reply strictly in the following format:", "Answer: <<number>>"]) + "\n"
    return RenderedQuestion(prompt=prompt, scenario=LT, task="probe", rule=None, expected=value,
                            expected_text=f"Answer: {value}", metadata={"probe": kind, **ops})
