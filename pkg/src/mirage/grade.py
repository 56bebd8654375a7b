"""Parsing of free-text model replies and grading against ground-truth rules.

Rule answers are graded by functional equivalence over the input domain;
example answers by exact match.
"""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass

import numpy as np

from .errors import ArityError, DimensionMismatch, FormatError, ParseError
from .rules import (VARIABLES, EquivalencePolicy, MetaRule, apply_rule, apply_rule_string,
                    find_disagreement, slot_expressions, variable)
from .render import RI, RenderedQuestion, Scenario, digits_to_letters

CORRECT, INCORRECT, UNPARSEABLE = "correct", "incorrect", "unparseable"


# ---------------------------------------------------------------- expressions

@dataclass(frozen=True)
class LinearExpr:
    """Integer-coefficient linear form: sum of coeff*variable plus a constant."""

    terms: tuple = ()  # sorted (index, coeff) pairs, zero coefficients dropped
    const: int = 0

    @classmethod
    def build(cls, coeffs: dict, const: int) -> "LinearExpr":
        return cls(tuple(sorted((i, c) for i, c in coeffs.items() if c)), const)

    def evaluate(self, x) -> int:
        return sum(c * x[i] for i, c in self.terms) + self.const

    def evaluate_batch(self, X) -> np.ndarray:
        out = np.full(len(X), self.const, dtype=np.int64)
        for i, c in self.terms:
            out += c * X[:, i]
        return out

    @property
    def max_index(self) -> int:
        return max((i for i, _ in self.terms), default=-1)

    def __str__(self):
        parts = [variable(i) if c == 1 else f"{c}*{variable(i)}" for i, c in self.terms]
        if self.const or not parts:
            parts.append(str(self.const))
        return "+".join(parts).replace("+-", "-")


@dataclass(frozen=True)
class ConcatExpr:
    """String-scenario slot: a concatenation of variables and literal text."""

    tokens: tuple = ()  # ("var", index) or ("lit", text); adjacent literals merged

    @classmethod
    def build(cls, tokens) -> "ConcatExpr":
        merged = []
        for kind, value in tokens:
            if kind == "lit":
                if not value:
                    continue
                if merged and merged[-1][0] == "lit":
                    merged[-1] = ("lit", merged[-1][1] + value)
                    continue
            merged.append((kind, value))
        return cls(tuple(merged))

    def evaluate_string(self, x) -> str:
        return "".join(x[v] if k == "var" else v for k, v in self.tokens)

    def evaluate_string_batch(self, S) -> np.ndarray:
        out = np.full(len(S), "", dtype=object)
        for kind, value in self.tokens:
            out = out + (S[:, value] if kind == "var" else value)
        return out

    @property
    def max_index(self) -> int:
        return max((v for k, v in self.tokens if k == "var"), default=-1)

    def __str__(self):
        text = "".join(variable(v) if k == "var" else v for k, v in self.tokens)
        return text or "''"


_ARITH_OPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply}


@dataclass(frozen=True)
class ArithExpr:
    """Non-linear arithmetic over +, -, * evaluated pointwise (code answers only)."""

    source: str

    def _eval(self, node, X):
        if isinstance(node, ast.Expression):
            return self._eval(node.body, X)
        if isinstance(node, ast.BinOp):
            return _ARITH_OPS[type(node.op)](self._eval(node.left, X), self._eval(node.right, X))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, X)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Constant):
            return np.int64(node.value)
        return X[:, VARIABLES.index(node.id)].astype(np.int64)

    def evaluate(self, x) -> int:
        return int(self.evaluate_batch(np.asarray([x]))[0])

    def evaluate_batch(self, X) -> np.ndarray:
        val = self._eval(ast.parse(self.source, mode="eval"), np.asarray(X))
        return np.broadcast_to(val, (len(X),)).astype(np.int64)

    @property
    def max_index(self) -> int:
        names = [n.id for n in ast.walk(ast.parse(self.source, mode="eval")) if isinstance(n, ast.Name)]
        return max((VARIABLES.index(n) for n in names), default=-1)

    def __str__(self):
        return self.source


# ---------------------------------------------------------------- linear grammar

_TOKEN = re.compile(r"\s*(?:(?P<int>\d+)|(?P<var>[A-Z])|(?P<op>[+\-*])|(?P<bad>\S))")


def _tokenize(text):
    tokens = []
    for m in _TOKEN.finditer(text):
        if m.group("bad"):
            raise ParseError(f"unexpected character {m.group('bad')!r}", m.start("bad"))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
    return tokens


def _check_var(index, dim, pos):
    if dim is not None and index >= dim:
        raise ParseError(f"variable {variable(index)} is out of range for dimension {dim}", pos)


def parse_expression(text: str, dim: int | None = None) -> LinearExpr:
    """Parse ``term (+ term)*`` where a term is ``k*X``, ``kX``, ``X``, ``X*k`` or ``k``.

    Coefficients are merged and constants folded.  Products of two
    variables are rejected.
    """
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty expression", 0)
    coeffs, const = {}, 0
    pos = 0
    sign = 1
    if tokens[0][0] == "op" and tokens[0][1] == "-":
        sign, pos = -1, 1
    while True:
        coeff, var = sign, None
        while True:
            if pos >= len(tokens):
                raise ParseError("expression ends where a term was expected", len(text))
            kind, value, at = tokens[pos]
            if kind == "int":
                coeff *= int(value)
            elif kind == "var":
                if var is not None:
                    raise ParseError("product of variables is not linear", at)
                var = VARIABLES.index(value)
                _check_var(var, dim, at)
            else:
                raise ParseError(f"unexpected operator {value!r}", at)
            pos += 1
            if pos < len(tokens) and tokens[pos][1] == "*":
                pos += 1
                continue
            if pos < len(tokens) and tokens[pos][0] == "var" and kind == "int":
                continue  # juxtaposition such as 2B
            break
        if var is None:
            const += coeff
        else:
            coeffs[var] = coeffs.get(var, 0) + coeff
        if pos >= len(tokens):
            break
        kind, value, at = tokens[pos]
        if kind != "op" or value == "*":
            raise ParseError(f"expected '+' between terms, found {value!r}", at)
        sign = 1 if value == "+" else -1
        pos += 1
    return LinearExpr.build(coeffs, const)


_ST_TOKEN = re.compile(
    r"\s*(?:(?P<quoted>'[^']*'|\"[^\"]*\")|(?P<rep>[A-Z]\s*\*\s*\d+|\d+\s*\*\s*[A-Z])"
    r"|(?P<var>[A-Z])|(?P<lit>[a-z]+)|(?P<plus>\+)|(?P<bad>\S))")


def parse_string_expression(text: str, dim: int | None = None) -> ConcatExpr:
    """Parse a concatenation such as ``BC``, ``A*2+d`` or ``''`` (empty)."""
    tokens = []
    for m in _ST_TOKEN.finditer(text):
        kind = m.lastgroup
        value = m.group(kind)
        at = m.start(kind)
        if kind == "bad":
            raise ParseError(f"unexpected character {value!r}", at)
        if kind == "quoted":
            tokens.append(("lit", value[1:-1]))
        elif kind == "lit":
            tokens.append(("lit", value))
        elif kind == "var":
            idx = VARIABLES.index(value)
            _check_var(idx, dim, at)
            tokens.append(("var", idx))
        elif kind == "rep":
            name = re.search(r"[A-Z]", value).group()
            count = int(re.search(r"\d+", value).group())
            idx = VARIABLES.index(name)
            _check_var(idx, dim, at)
            tokens.extend([("var", idx)] * count)
    return ConcatExpr.build(tokens)


# ---------------------------------------------------------------- code expressions

def _linearize(node, dim):
    """Linear form (coeffs, const) of an arithmetic AST, or None if non-linear."""
    if isinstance(node, ast.Constant) and type(node.value) is int:
        return {}, node.value
    if isinstance(node, ast.Name) and len(node.id) == 1 and node.id in VARIABLES:
        idx = VARIABLES.index(node.id)
        _check_var(idx, dim, getattr(node, "col_offset", None))
        return {idx: 1}, 0
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _linearize(node.operand, dim)
        if inner is None:
            return None
        sign = -1 if isinstance(node.op, ast.USub) else 1
        return {i: sign * c for i, c in inner[0].items()}, sign * inner[1]
    if isinstance(node, ast.BinOp) and type(node.op) in _ARITH_OPS:
        left, right = _linearize(node.left, dim), _linearize(node.right, dim)
        if left is None or right is None:
            return None
        if isinstance(node.op, ast.Mult):
            if left[0] and right[0]:
                return None
            (vars_, c), k = (left, right[1]) if left[0] else (right, left[1])
            return {i: k * v for i, v in vars_.items()}, c * k
        sign = -1 if isinstance(node.op, ast.Sub) else 1
        coeffs = dict(left[0])
        for i, v in right[0].items():
            coeffs[i] = coeffs.get(i, 0) + sign * v
        return coeffs, left[1] + sign * right[1]
    raise ParseError(f"unsupported syntax in code expression: {ast.dump(node)[:60]}",
                     getattr(node, "col_offset", None))


def parse_code_expression(node_or_text, dim: int | None = None):
    """Linear form when possible, otherwise a pointwise-evaluated expression."""
    node = node_or_text
    if isinstance(node, str):
        try:
            node = ast.parse(node.strip(), mode="eval").body
        except SyntaxError:
            return parse_expression(node_or_text, dim)
    form = _linearize(node, dim)
    if form is not None:
        return LinearExpr.build(*form)
    return ArithExpr(ast.unparse(node))


# ---------------------------------------------------------------- parsed rules and answers

@dataclass(frozen=True)
class ParsedRule:
    slots: tuple
    string_mode: bool = False

    @property
    def dim(self) -> int:
        return len(self.slots)

    def evaluate(self, x) -> tuple:
        if self.string_mode:
            return tuple(s.evaluate_string(x) for s in self.slots)
        return tuple(s.evaluate(x) for s in self.slots)

    def evaluate_batch(self, X) -> np.ndarray:
        X = np.asarray(X)
        return np.column_stack([s.evaluate_batch(X) for s in self.slots])

    def evaluate_string_batch(self, S) -> np.ndarray:
        S = np.asarray(S, dtype=object)
        cols = [s.evaluate_string_batch(S) for s in self.slots]
        out = np.empty((len(S), self.dim), dtype=object)
        for j, col in enumerate(cols):
            out[:, j] = col
        return out

    def slot_texts(self) -> list[str]:
        return [str(s) for s in self.slots]

    def __str__(self):
        lhs = ", ".join(variable(j) for j in range(self.dim))
        return f"[{lhs}] -> [{', '.join(self.slot_texts())}]"


def _normalize(text: str) -> str:
    return (text or "").replace("→", "->").replace("=>", "->").replace("**", "").replace("`", "")


def _split_slots(body: str) -> list[str]:
    body = body.strip().rstrip(".").strip()
    if body.startswith("[") and body.endswith("]"):
        body = body[1:-1]
    elif body.startswith("(") and body.endswith(")"):
        body = body[1:-1]
    return [part.strip() for part in body.split(",")]


def _arity(slots, dim):
    if len(slots) != dim:
        raise ArityError(f"expected {dim} slots, found {len(slots)}")
    return slots


def _noun_pattern(noun: str) -> str:
    return r"(?<![A-Za-z])" + re.escape(noun) + r"(?![A-Za-z])"


def _split_by_nouns(text: str, nouns, dim: int) -> list[str]:
    parts, cursor = [], 0
    for noun in nouns[:dim]:
        m = re.compile(_noun_pattern(noun)).search(text, cursor)
        if m is None:
            raise ArityError(f"expected {dim} object slots, could not find {noun!r}")
        part = text[cursor:m.start()].strip().strip(",").strip()
        part = re.sub(r"^(?:and|,)\s+", "", part).strip()
        parts.append(part)
        cursor = m.end()
    return parts


def _last(pattern, text, flags=0):
    found = list(re.finditer(pattern, text, flags))
    return found[-1] if found else None


def parse_rule_response(text: str, scenario, dim: int) -> ParsedRule:
    """Find the scenario's rule stanza in a reply and parse each slot.

    When several stanzas are present the last one wins.
    """
    scenario = Scenario.parse(scenario)
    text = _normalize(text)
    kind = scenario.kind
    if kind == "LT":
        m = _last(r"Rule\s*:\s*\[([^\]\n]*)\]\s*->\s*\[([^\]\n]*)\]", text)
        if m is None:
            raise FormatError("no 'Rule: [..] -> [..]' stanza found")
        slots = _arity(_split_slots(m.group(2)), dim)
        return ParsedRule(tuple(parse_expression(s, dim) for s in slots))
    if kind == "ST":
        m = _last(r"Rule\s*:\s*(?:\[[^\]\n]*\]|[A-Z]+)\s*->\s*([^\n]*)", text)
        if m is None:
            raise FormatError("no 'Rule: ABC -> ...' stanza found")
        body = m.group(1).strip()
        if body.startswith("["):
            body = body[:body.find("]") + 1] if "]" in body else body
        slots = _arity(_split_slots(body), dim)
        return ParsedRule(tuple(parse_string_expression(s, dim) for s in slots), string_mode=True)
    if kind == "CG":
        return _parse_code_rule(text, dim)
    m = _last(r"After the[^,\n]*,\s*there (?:are|is|will be)\s+([^\n]*)", text, re.IGNORECASE)
    if m is None:
        raise FormatError("no 'After the ..., there are ...' rule stanza found")
    slots = _split_by_nouns(m.group(1), scenario.rp.objects, dim)
    return ParsedRule(tuple(parse_expression(s, dim) for s in slots))


def _parse_code_rule(text: str, dim: int) -> ParsedRule:
    names = [variable(j) for j in range(dim)]
    rhs = None
    for m in re.finditer(r"^[ \t]*([A-Z](?:[ \t]*,[ \t]*[A-Z])*)[ \t]*=(?!=)[ \t]*(.+?)[ \t]*$", text, re.M):
        if [n.strip() for n in m.group(1).split(",")] == names:
            rhs = m.group(2)
    if rhs is None:
        m = _last(r"^[ \t]*return[ \t]+(.+?)[ \t]*$", text, re.M)
        if m is not None and [p.strip() for p in m.group(1).strip("()").split(",")] != names:
            rhs = m.group(1)
    if rhs is None:
        raise FormatError("no tuple assignment or return line found in the function body")
    try:
        tree = ast.parse(rhs.strip().rstrip(";"), mode="eval").body
    except SyntaxError:
        slots = _arity(_split_slots(rhs), dim)
        return ParsedRule(tuple(parse_code_expression(s, dim) for s in slots))
    elts = tree.elts if isinstance(tree, (ast.Tuple, ast.List)) else [tree]
    _arity(elts, dim)
    return ParsedRule(tuple(parse_code_expression(e, dim) for e in elts))


def _answer_stanza(text: str) -> str:
    m = _last(r"Answer\s*:[ \t]*([^\n]*)", text)
    if m is None:
        raise FormatError("no 'Answer:' stanza found")
    body = m.group(1).strip()
    if not body:
        rest = text[m.end():].strip().splitlines()
        body = rest[0].strip() if rest else ""
    if not body:
        raise FormatError("empty 'Answer:' stanza")
    return body


def parse_answer_response(text: str, scenario, dim: int) -> tuple:
    """Extract the concrete output vector (ints, or strings for ST) from a reply."""
    scenario = Scenario.parse(scenario)
    body = _answer_stanza(_normalize(text))
    if scenario.kind == "RP":
        values, cursor = [], 0
        for noun in scenario.rp.objects[:dim]:
            m = re.compile(r"(-?\d+)\s*" + _noun_pattern(noun)).search(body, cursor)
            if m is None:
                raise ArityError(f"expected {dim} object counts, could not find a count of {noun!r}")
            values.append(int(m.group(1)))
            cursor = m.end()
        return tuple(values)
    parts = _arity(_split_slots(body), dim)
    if scenario.kind == "ST":
        return tuple(p.strip().strip("'\"") for p in parts)
    values = []
    for p in parts:
        if not re.fullmatch(r"-?\d+", p):
            raise ParseError(f"answer component {p!r} is not an integer")
        values.append(int(p))
    return tuple(values)


def parse_number_response(text: str) -> int:
    body = _answer_stanza(_normalize(text))
    m = re.search(r"-?\d+", body)
    if m is None:
        raise ParseError(f"no integer in answer {body!r}")
    return int(m.group())


def parse_rule_text(text: str, dim: int, string_mode: bool = False) -> ParsedRule:
    """Parse canonical rule text ``[A, B] -> [..]``, or just its right-hand side ``[..]``."""
    text = _normalize(text)
    if "->" not in text:
        names = [variable(j) for j in range(dim)]
        lhs = "".join(names) if string_mode else "[" + ", ".join(names) + "]"
        text = f"{lhs} -> {text.strip()}"
    if not re.search(r"Rule\s*:", text):
        text = "Rule: " + text
    return parse_rule_response(text, "ST" if string_mode else "LT", dim)


# ---------------------------------------------------------------- judgments

@dataclass(frozen=True)
class Judgment:
    verdict: str
    reason: str = ""
    counterexample: tuple | None = None

    @property
    def correct(self) -> bool:
        return self.verdict == CORRECT

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict, "reason": self.reason}
        if self.counterexample is not None:
            out["counterexample"] = list(self.counterexample)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Judgment":
        ce = data.get("counterexample")
        return cls(data["verdict"], data.get("reason", ""), tuple(ce) if ce is not None else None)


def judge_ri(pr: ParsedRule, truth: MetaRule, policy: EquivalencePolicy | None = None,
             hints=(), strict: bool = False) -> Judgment:
    """Correct iff the parsed rule computes the same function as ``truth``.

    ``strict`` compares canonical slot texts instead (sensitivity analysis).
    """
    if pr.dim != truth.dim:
        raise DimensionMismatch(f"parsed rule has {pr.dim} slots, truth has dimension {truth.dim}")
    if strict:
        if pr.slot_texts() == slot_expressions(truth, pr.string_mode):
            return Judgment(CORRECT, "canonical text matches")
        return Judgment(INCORRECT, "canonical text differs")
    witness = find_disagreement(pr, truth, policy, pr.string_mode, hints)
    if witness is None:
        return Judgment(CORRECT, "equivalent on every probe")
    return Judgment(INCORRECT, "outputs differ on a probe input", witness)


def judge_ei(pa, truth: MetaRule, x_t, string_mode: bool = False) -> Judgment:
    if len(pa) != truth.dim or len(x_t) != truth.dim:
        raise DimensionMismatch("answer, rule and test input must share a dimension")
    want = apply_rule_string(truth, digits_to_letters(x_t)) if string_mode else apply_rule(truth, x_t)
    if tuple(pa) == tuple(want):
        return Judgment(CORRECT, "exact match")
    slots = [j for j, (a, b) in enumerate(zip(pa, want)) if a != b]
    return Judgment(INCORRECT, f"mismatch at slot(s) {slots}")


def grade_response(question: RenderedQuestion, text: str, policy: EquivalencePolicy | None = None,
                   strict: bool = False) -> Judgment:
    """Parse a raw reply for ``question`` and judge it; parse failures are unparseable."""
    try:
        if question.task == "probe":
            got = parse_number_response(text)
            ok = got == question.expected
            return Judgment(CORRECT if ok else INCORRECT, "exact match" if ok else f"got {got}")
        dim = question.rule.dim
        if question.task == RI:
            pr = parse_rule_response(text, question.scenario, dim)
            hints = [question.test_input] if question.test_input is not None else []
            return judge_ri(pr, question.rule, policy, hints, strict)
        pa = parse_answer_response(text, question.scenario, dim)
        return judge_ei(pa, question.rule, question.test_input, question.scenario.string_mode)
    except (FormatError, ParseError, ArityError) as exc:
        return Judgment(UNPARSEABLE, f"{type(exc).__name__}: {exc}")
