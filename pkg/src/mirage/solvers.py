"""Reference reasoners and refinement loops over a pluggable proposer."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Protocol

from .errors import MirageError, ParseError, FormatError, ArityError, ProposerFailure
from .facts import CHEBYSHEV, DistanceMetric, Fact, FactSet, distance
from .grade import ParsedRule, parse_rule_text
from .rules import (EquivalencePolicy, MetaRule, apply_rule, enumerate_rules, find_disagreement,
                    rule_text)

FULL_FIT = "full-fit"
ITERATION_CAP = "iteration-cap"
APPROVED = "approved"


class Proposer(Protocol):
    def propose(self, fs: FactSet, feedback: "Feedback | None", n: int) -> list[str]:
        ...

    def critique(self, fs: FactSet, rule: str) -> str:
        ...


@dataclass(frozen=True)
class Feedback:
    """What a refinement loop hands back to the proposer after a round."""

    iteration: int
    text: str
    best: str | None = None
    best_score: int | None = None
    errors: tuple = ()


def enumerative_induce(fs: FactSet) -> list[MetaRule]:
    """Every grammar rule at the set's dimension that reproduces all facts."""
    if fs.size == 0:
        raise ValueError("cannot induce from an empty fact set")
    out = []
    for rule in enumerate_rules(fs.dim):
        if all(apply_rule(rule, f.x) == f.y for f in fs.facts):
            out.append(rule)
    return out


def score_rule_on_facts(rule, fs: FactSet):
    """(number of facts reproduced, [(fact, actual, expected), ...] for the rest)."""
    if rule.dim != fs.dim:
        raise ValueError(f"rule dimension {rule.dim} does not match fact set dimension {fs.dim}")
    errors = []
    for fact in fs.facts:
        actual = tuple(rule.evaluate(fact.x))
        if actual != fact.y:
            errors.append((fact, actual, fact.y))
    return fs.size - len(errors), errors


def _error_lines(errors, limit):
    lines = []
    for fact, actual, expected in errors[:limit]:
        lines.append(f"Input: {list(fact.x)}  Expected: {list(expected)}  Got: {list(actual)}")
    return lines


# ---------------------------------------------------------------- proposers

class EnumerativeProposer:
    """Proposes full-fit rules in canonical order, falling back to the best scorers."""

    def propose(self, fs, feedback=None, n=1):
        fits = enumerative_induce(fs)
        if not fits:
            ranked = sorted(enumerate_rules(fs.dim), key=lambda r: -score_rule_on_facts(r, fs)[0])
            fits = ranked
        return [rule_text(r) for r in fits[:n]]

    def critique(self, fs, rule):
        try:
            count, _ = score_rule_on_facts(parse_rule_text(rule, fs.dim), fs)
        except MirageError as exc:
            return f"The rule could not be read: {exc}"
        return "correct" if count == fs.size else f"This rule fits {count} of {fs.size} facts."


class ScriptedProposer:
    """Replays fixed candidate lists, one list per round (the last list repeats)."""

    def __init__(self, rounds, critiques=None):
        self.rounds = [list(r) for r in rounds]
        self.critiques = list(critiques or [])

    def propose(self, fs, feedback=None, n=1):
        i = 0 if feedback is None else feedback.iteration
        return self.rounds[min(i, len(self.rounds) - 1)][:n]

    def critique(self, fs, rule):
        if not self.critiques:
            return "correct"
        return self.critiques.pop(0) if len(self.critiques) > 1 else self.critiques[0]


class FixOneErrorProposer:
    """At round i proposes the canonical-first rule consistent with the first i facts."""

    def propose(self, fs, feedback=None, n=1):
        i = 0 if feedback is None else feedback.iteration
        head = fs.facts[:i]
        for rule in enumerate_rules(fs.dim):
            if all(apply_rule(rule, f.x) == f.y for f in head):
                return [rule_text(rule)]
        return []

    def critique(self, fs, rule):
        return "revise"


class FailingProposer:
    """Raises after ``after`` successful rounds; used to exercise failure handling."""

    def __init__(self, inner, after=1):
        self.inner, self.after = inner, after

    def propose(self, fs, feedback=None, n=1):
        i = 0 if feedback is None else feedback.iteration
        if i >= self.after:
            raise RuntimeError("proposer unavailable")
        return self.inner.propose(fs, feedback, n)

    def critique(self, fs, rule):
        return self.inner.critique(fs, rule)


# ---------------------------------------------------------------- traces

@dataclass
class IterationRecord:
    candidates: list
    scores: list
    best: str | None
    best_score: int
    feedback: str | None = None

    def to_dict(self):
        return {"candidates": list(self.candidates), "scores": list(self.scores),
                "best": self.best, "best_score": self.best_score, "feedback": self.feedback}


@dataclass
class RefinementTrace:
    iterations: list = field(default_factory=list)
    stop_reason: str | None = None

    def __len__(self):
        return len(self.iterations)

    @property
    def best_scores(self) -> list:
        return [it.best_score for it in self.iterations]

    def to_dict(self):
        return {"iterations": [it.to_dict() for it in self.iterations], "stop_reason": self.stop_reason}


def _parse_candidate(text, dim):
    try:
        return parse_rule_text(text, dim)
    except (FormatError, ParseError, ArityError):
        return None


def hypothesis_refine(proposer, fs: FactSet, t: int, n: int, max_errors: int = 3):
    """Propose, score against the facts, and refine on the best candidate's errors.

    Returns ``(best ParsedRule or None, trace)``.  A candidate that fits
    every fact is returned in the round it appears.
    """
    if t < 1 or n < 1:
        raise ValueError("t and n must be at least 1")
    trace = RefinementTrace()
    best_rule, best_text, best_score, best_errors = None, None, -1, []
    feedback = None
    for i in range(t):
        try:
            candidates = list(proposer.propose(fs, feedback, n))
        except Exception as exc:
            raise ProposerFailure(f"proposer failed in round {i + 1}: {exc}", trace) from exc
        scores = []
        for text in candidates:
            parsed = _parse_candidate(text, fs.dim)
            if parsed is None:
                scores.append(-1)
                continue
            score, errors = score_rule_on_facts(parsed, fs)
            scores.append(score)
            if score > best_score:
                best_rule, best_text, best_score, best_errors = parsed, text, score, errors
        trace.iterations.append(IterationRecord(candidates, scores, best_text, max(best_score, 0),
                                                feedback.text if feedback else None))
        if best_score == fs.size:
            trace.stop_reason = FULL_FIT
            return best_rule, trace
        text = "\n".join([f"Best rule so far: {best_text}",
                          f"It fits {max(best_score, 0)} of {fs.size} facts. Incorrect examples:"]
                         + _error_lines(best_errors, max_errors))
        feedback = Feedback(i + 1, text, best_text, max(best_score, 0), tuple(best_errors[:max_errors]))
    trace.stop_reason = ITERATION_CAP
    return best_rule, trace


def is_approval(critique: str, token: str = "correct") -> bool:
    pattern = r"(?<!not )(?<!in)\b" + re.escape(token) + r"\b"
    return re.search(pattern, critique, re.IGNORECASE) is not None


def self_refine(proposer, fs: FactSet, t: int, stop_on_approval: bool = True, approval_token: str = "correct"):
    """Refine on the proposer's own critique; the last iterate is returned."""
    if t < 1:
        raise ValueError("t must be at least 1")
    trace = RefinementTrace()
    feedback, current = None, None
    for i in range(t):
        try:
            proposals = proposer.propose(fs, feedback, 1)
            current = proposals[0] if proposals else None
            critique = proposer.critique(fs, current) if current is not None else ""
        except Exception as exc:
            raise ProposerFailure(f"proposer failed in round {i + 1}: {exc}", trace) from exc
        trace.iterations.append(IterationRecord([current], [], current, 0, critique))
        if stop_on_approval and is_approval(critique, approval_token):
            trace.stop_reason = APPROVED
            break
        feedback = Feedback(i + 1, critique, current)
    else:
        trace.stop_reason = ITERATION_CAP
    parsed = _parse_candidate(current, fs.dim) if current is not None else None
    return parsed, trace


def self_consistency(samples, policy: EquivalencePolicy | None = None):
    """Majority vote; rules vote by functional equivalence, ties go to the earliest."""
    if not samples:
        raise ValueError("self_consistency needs at least one sample")
    classes = []  # [representative, count]
    for s in samples:
        for entry in classes:
            if _same(entry[0], s, policy):
                entry[1] += 1
                break
        else:
            classes.append([s, 1])
    best = max(c for _, c in classes)
    return next(rep for rep, c in classes if c == best)


def _same(a, b, policy):
    if hasattr(a, "evaluate_batch") and hasattr(b, "evaluate_batch"):
        if a.dim != b.dim:
            return False
        string_mode = getattr(a, "string_mode", False) or getattr(b, "string_mode", False)
        return find_disagreement(a, b, policy, string_mode) is None
    return tuple(a) == tuple(b) if isinstance(a, (tuple, list)) else a == b


def neighbor_predict(fs: FactSet, x_t, metric: DistanceMetric = CHEBYSHEV, mode: str = "lenient",
                     radius: float | None = None):
    """Answer by copying the output of the fact nearest to ``x_t``.

    Ties go to the smallest index.  ``strict`` abstains (returns None)
    unless the neighbor's input equals ``x_t`` in every slot.  With
    ``radius`` set, both modes abstain when no fact lies within it.
    """
    if fs.size == 0:
        raise ValueError("neighbor_predict needs a non-empty fact set")
    if mode not in ("lenient", "strict"):
        raise ValueError(f"unknown mode {mode!r}")
    x_t = tuple(x_t)
    dists = [distance(f.x, x_t, metric) for f in fs.facts]
    idx = min(range(fs.size), key=lambda i: (dists[i], i))
    if radius is not None and dists[idx] > radius:
        return None
    neighbor = fs.facts[idx]
    if mode == "strict" and neighbor.x != x_t:
        return None
    return tuple(neighbor.y)


class EnumerativeSolver:
    """Rule-based reference reasoner: answers examples with its induced rule."""

    def induce(self, fs: FactSet):
        fits = enumerative_induce(fs)
        return fits[0] if fits else None

    def deduce(self, fs: FactSet, x_t):
        rule = self.induce(fs)
        return None if rule is None else apply_rule(rule, x_t)


class NeighborSolver:
    """Non-inducing baseline: no rule, examples answered by nearest neighbor."""

    def __init__(self, metric: DistanceMetric = CHEBYSHEV, mode: str = "lenient"):
        self.metric, self.mode = metric, mode

    def induce(self, fs):
        return None

    def deduce(self, fs, x_t):
        return neighbor_predict(fs, x_t, self.metric, self.mode)


def facts_from_pairs(pairs) -> tuple:
    return tuple(Fact(tuple(x), tuple(y)) for x, y in pairs)


__all__ = [
    "Proposer", "Feedback", "enumerative_induce", "score_rule_on_facts", "EnumerativeProposer",
    "ScriptedProposer", "FixOneErrorProposer", "FailingProposer", "IterationRecord", "RefinementTrace",
    "hypothesis_refine", "self_refine", "self_consistency", "neighbor_predict", "is_approval",
    "EnumerativeSolver", "NeighborSolver", "FULL_FIT", "ITERATION_CAP", "APPROVED", "ParsedRule",
]
