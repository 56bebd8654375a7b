"""Fact sampling, filtering, perturbation and neighborhood geometry."""
from __future__ import annotations

import enum
import itertools
import math
import random
from dataclasses import dataclass

from .errors import DimensionMismatch, GenerationExhausted, InvalidRule
from .rules import MetaRule, apply_rule, sample_rule

DEFAULT_ATTEMPT_CAP = 10_000


@dataclass(frozen=True)
class Fact:
    x: tuple
    y: tuple

    def to_list(self):
        return [list(self.x), list(self.y)]


def is_trivial_fact(fact: Fact) -> bool:
    """x == y, or x is all zero, or y is all zero."""
    return fact.x == fact.y or not any(fact.x) or not any(fact.y)


@dataclass(frozen=True)
class FactSet:
    """Facts observed under one rule.

    A set is consistent with its rule except, when ``perturbed_index`` is
    set, at exactly that fact.
    """

    rule: MetaRule
    facts: tuple
    perturbed_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "facts", tuple(self.facts))
        inputs = [f.x for f in self.facts]
        if len(set(inputs)) != len(inputs):
            raise InvalidRule("fact inputs must be pairwise distinct")
        for i, fact in enumerate(self.facts):
            if len(fact.x) != self.rule.dim or len(fact.y) != self.rule.dim:
                raise DimensionMismatch(f"fact {i} does not match rule dimension {self.rule.dim}")
            consistent = apply_rule(self.rule, fact.x) == fact.y
            if consistent == (i == self.perturbed_index):
                what = "is consistent with" if consistent else "violates"
                raise InvalidRule(f"fact {i} {what} the rule")
        if self.perturbed_index is None and sum(map(is_trivial_fact, self.facts)) > 1:
            raise InvalidRule("a fact set may hold at most one trivial fact")

    @property
    def size(self) -> int:
        return len(self.facts)

    @property
    def dim(self) -> int:
        return self.rule.dim

    @property
    def inputs(self) -> list:
        return [f.x for f in self.facts]

    @property
    def perturbed(self) -> bool:
        return self.perturbed_index is not None

    def prefix(self, k: int) -> "FactSet":
        idx = self.perturbed_index if self.perturbed_index is not None and self.perturbed_index < k else None
        return FactSet(self.rule, self.facts[:k], idx)


# ---------------------------------------------------------------- distances

@dataclass(frozen=True)
class DistanceMetric:
    name: str = "chebyshev"
    p: int = 3

    def __post_init__(self):
        if self.name not in ("chebyshev", "euclidean", "manhattan", "minkowski"):
            raise ValueError(f"unknown metric {self.name!r}")
        if self.p < 1:
            raise ValueError("minkowski order must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "DistanceMetric":
        name, _, p = text.lower().partition(":")
        return cls(name, int(p)) if p else cls(name)

    def __str__(self):
        return f"minkowski:{self.p}" if self.name == "minkowski" else self.name


CHEBYSHEV = DistanceMetric("chebyshev")
EUCLIDEAN = DistanceMetric("euclidean")
MANHATTAN = DistanceMetric("manhattan")
MINKOWSKI3 = DistanceMetric("minkowski", 3)


def distance(a, b, metric: DistanceMetric = CHEBYSHEV) -> float:
    if len(a) != len(b):
        raise DimensionMismatch(f"cannot measure dim {len(a)} against dim {len(b)}")
    diffs = [abs(u - v) for u, v in zip(a, b)]
    if metric.name == "chebyshev":
        return max(diffs)
    if metric.name == "manhattan":
        return sum(diffs)
    if metric.name == "euclidean":
        return math.sqrt(sum(t * t for t in diffs))
    return sum(t ** metric.p for t in diffs) ** (1.0 / metric.p)


class FactClass(str, enum.Enum):
    IF = "IF"  # in-neighborhood
    CF = "CF"  # cross-neighborhood
    OF = "OF"  # out-of-neighborhood

    def __str__(self):
        return self.value


def classify_fact(fact, x_t, epsilon: int, metric: DistanceMetric = CHEBYSHEV) -> FactClass:
    """Place a fact (or bare input vector) relative to the test input.

    Under Chebyshev distance: IF when every component is within epsilon, OF
    when none is, CF otherwise.  Under the other metrics only the ball is
    defined, so the result is IF inside it and OF outside.
    """
    x = fact.x if isinstance(fact, Fact) else tuple(fact)
    if len(x) != len(x_t):
        raise DimensionMismatch(f"cannot classify dim {len(x)} against dim {len(x_t)}")
    if distance(x, x_t, metric) <= epsilon:
        return FactClass.IF
    if metric.name != "chebyshev":
        return FactClass.OF
    if any(abs(u - v) <= epsilon for u, v in zip(x, x_t)):
        return FactClass.CF
    return FactClass.OF


@dataclass(frozen=True)
class GenerationConstraint:
    """Where fact inputs may be drawn relative to a test input.

    With ``fact_class`` unset the only restriction is that ``x_t`` itself is
    never used as a fact input.
    """

    x_t: tuple | None = None
    epsilon: int = 0
    fact_class: FactClass | None = None
    metric: DistanceMetric = CHEBYSHEV
    attempt_cap: int = DEFAULT_ATTEMPT_CAP

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.attempt_cap < 1:
            raise ValueError("attempt_cap must be at least 1")
        if self.fact_class is not None:
            if self.x_t is None:
                raise ValueError("a class constraint needs a test input")
            object.__setattr__(self, "fact_class", FactClass(self.fact_class))
            if self.fact_class is FactClass.CF and self.metric.name != "chebyshev":
                raise ValueError("cross-neighborhood facts are only defined for Chebyshev distance")
        if self.x_t is not None:
            object.__setattr__(self, "x_t", tuple(self.x_t))


def is_degenerate(rule: MetaRule) -> bool:
    """True when every output is all-zero, so no fact under the rule is non-trivial."""
    return rule.kind == "pad" and rule.c == 0 and len(rule.r) == rule.dim


def sample_task_rules(dim: int, count: int, rng: random.Random, attempt_cap: int = 10_000) -> list:
    """``count`` structurally distinct rules that admit fact sets of any size."""
    seen, out = set(), []
    for _ in range(attempt_cap):
        rule = sample_rule(dim, rng)
        if rule in seen or is_degenerate(rule):
            continue
        seen.add(rule)
        out.append(rule)
        if len(out) == count:
            return out
    raise GenerationExhausted(f"could not draw {count} distinct rules at dim={dim}")


def sample_input(dim: int, rng: random.Random) -> tuple:
    return tuple(rng.randrange(10) for _ in range(dim))


def _component_choices(x_t, epsilon, cls):
    if cls is FactClass.IF:
        return [list(range(max(0, v - epsilon), min(9, v + epsilon) + 1)) for v in x_t]
    return [[u for u in range(10) if abs(u - v) > epsilon] for v in x_t]


def generate_fact_set(rule: MetaRule, n: int, constraint: GenerationConstraint | None = None,
                      rng: random.Random | None = None) -> FactSet:
    """Draw ``n`` distinct facts under ``rule`` with at most one trivial fact."""
    if n < 1:
        raise ValueError("a fact set needs at least one fact")
    rng = rng or random.Random()
    constraint = constraint or GenerationConstraint()
    x_t, cls = constraint.x_t, constraint.fact_class
    if x_t is not None and len(x_t) != rule.dim:
        raise DimensionMismatch("test input does not match rule dimension")
    if n > 1 and is_degenerate(rule):
        raise GenerationExhausted(f"rule {rule} only yields trivial facts; at most one fact exists")

    choices = None
    if cls in (FactClass.IF, FactClass.OF) and constraint.metric.name == "chebyshev":
        # both classes are boxes under Chebyshev distance; sample them directly
        choices = _component_choices(x_t, constraint.epsilon, cls)
        empty = [i for i, c in enumerate(choices) if not c]
        if empty:
            raise GenerationExhausted(
                f"no {cls.value} input exists for x_t={list(x_t)}, epsilon={constraint.epsilon}: "
                f"slot(s) {empty} have no admissible value")

    facts, seen, trivial = [], set(), 0
    for _ in range(n):
        for _attempt in range(constraint.attempt_cap):
            if choices is not None:
                x = tuple(rng.choice(c) for c in choices)
            else:
                x = sample_input(rule.dim, rng)
            if x in seen or x == x_t:
                continue
            if cls is not None and classify_fact(x, x_t, constraint.epsilon, constraint.metric) is not cls:
                continue
            fact = Fact(x, apply_rule(rule, x))
            if is_trivial_fact(fact):
                if trivial:
                    continue
                trivial += 1
            break
        else:
            where = "" if cls is None else f" as {cls.value} around {list(x_t)} with epsilon={constraint.epsilon}"
            raise GenerationExhausted(
                f"could not draw fact {len(facts) + 1} of {n}{where} within {constraint.attempt_cap} attempts")
        seen.add(x)
        facts.append(fact)
    return FactSet(rule, tuple(facts))


def perturb_fact_set(fs: FactSet, rng: random.Random, whole_vector: bool = False) -> FactSet:
    """Break the rule at one uniformly chosen fact.

    By default a single output component is replaced by a different digit;
    ``whole_vector`` resamples the full output instead.
    """
    idx = rng.randrange(fs.size)
    fact = fs.facts[idx]
    expected = apply_rule(fs.rule, fact.x)
    if whole_vector:
        while True:
            y = sample_input(fs.dim, rng)
            if y != expected:
                break
    else:
        slot = rng.randrange(fs.dim)
        value = rng.choice([v for v in range(10) if v != fact.y[slot]])
        y = fact.y[:slot] + (value,) + fact.y[slot + 1:]
    facts = list(fs.facts)
    facts[idx] = Fact(fact.x, y)
    return FactSet(fs.rule, tuple(facts), idx)


def _ball(x_t, eta):
    ranges = [range(max(0, v - eta), min(9, v + eta) + 1) for v in x_t]
    return itertools.product(*ranges)


def sample_test_inputs(x_t, eta: int | None, n: int, exclusions=(), rng: random.Random | None = None) -> list:
    """Draw ``n`` distinct inputs within Chebyshev ``eta`` of ``x_t``.

    ``eta=None`` means the whole space.  ``x_t`` and ``exclusions`` are
    never returned.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng or random.Random()
    x_t = tuple(x_t)
    banned = {tuple(v) for v in exclusions} | {x_t}
    dim = len(x_t)
    span = 10 if eta is None else min(10, 2 * eta + 1)
    if span ** dim <= 200_000:
        radius = 9 if eta is None else eta
        pool = [p for p in _ball(x_t, radius) if p not in banned]
        if len(pool) < n:
            raise GenerationExhausted(f"test region around {list(x_t)} with eta={eta} has only {len(pool)} free points")
        return rng.sample(pool, n)
    out, chosen = [], set()
    for _ in range(DEFAULT_ATTEMPT_CAP * n):
        if eta is None:
            p = sample_input(dim, rng)
        else:
            p = tuple(rng.randint(max(0, v - eta), min(9, v + eta)) for v in x_t)
        if p in banned or p in chosen:
            continue
        chosen.add(p)
        out.append(p)
        if len(out) == n:
            return out
    raise GenerationExhausted(f"could not draw {n} test inputs around {list(x_t)} with eta={eta}")
