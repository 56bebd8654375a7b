"""Single-operation vector transformation rules.

A rule is one of five atomic operations (add, copy, map, pad, swap) bound
to source indices ``d`` and target indices ``r`` on vectors of a fixed
dimension.  Rules are interpreted either over integer vectors or, for the
string scenario, over vectors of strings drawn from the letters ``a``-``j``.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import random
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, GenerationExhausted, InvalidAlphabet, InvalidRule

KINDS = ("add", "copy", "map", "pad", "swap")
LETTERS = "abcdefghij"
VARIABLES = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def letter(value: int) -> str:
    return LETTERS[value]


def variable(index: int) -> str:
    return VARIABLES[index]


def _pairs_sorted(d, r):
    pairs = sorted(zip(d, r))
    return tuple(p[0] for p in pairs), tuple(p[1] for p in pairs)


@dataclass(frozen=True)
class MetaRule:
    """An operation kind with its index vectors and parameters.

    Construction canonicalizes index order (sets are stored sorted, paired
    indices are stored sorted by source) so that dataclass equality is
    structural equality.  Rules equal to the identity are rejected.
    """

    kind: str
    d: tuple
    r: tuple
    dim: int
    k: int | None = None
    b: int | None = None
    c: int | None = None

    def __post_init__(self):
        kind = self.kind
        d, r = tuple(int(i) for i in self.d), tuple(int(i) for i in self.r)
        if kind in ("map", "swap") and len(d) != len(r):
            raise InvalidRule(f"{kind} pairs sources with targets; got |d|={len(d)}, |r|={len(r)}")
        if kind in ("add",):
            d, r = tuple(sorted(d)), tuple(sorted(r))
        elif kind in ("copy", "pad"):
            r = tuple(sorted(r))
        elif kind == "map":
            d, r = _pairs_sorted(d, r)
        elif kind == "swap":
            lo = [min(i, j) for i, j in zip(d, r)]
            hi = [max(i, j) for i, j in zip(d, r)]
            d, r = _pairs_sorted(lo, hi)
        else:
            raise InvalidRule(f"unknown operation kind {kind!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "r", r)
        self._validate()

    def _validate(self):
        kind, d, r, dim = self.kind, self.d, self.r, self.dim
        if dim < 2:
            raise InvalidRule(f"dimension must be at least 2, got {dim}")
        for i in d + r:
            if not 0 <= i < dim:
                raise InvalidRule(f"index {i} out of range for dimension {dim}")
        if len(set(d)) != len(d) or len(set(r)) != len(r):
            raise InvalidRule("index vectors may not contain duplicates")
        if not r:
            raise InvalidRule("target indices may not be empty")
        want = {"add": (), "copy": (), "map": ("k", "b"), "pad": ("c",), "swap": ()}[kind]
        for name in ("k", "b", "c"):
            present = getattr(self, name) is not None
            if present != (name in want):
                raise InvalidRule(f"parameter {name!r} is {'required' if name in want else 'not allowed'} for {kind}")
        if kind == "add":
            if len(d) < 2:
                raise InvalidRule("add needs at least two source indices")
        elif kind == "copy":
            if len(d) != 1:
                raise InvalidRule("copy needs exactly one source index")
            if r == d:
                raise InvalidRule("copy onto its own source is the identity")
        elif kind == "map":
            if d != r:
                raise InvalidRule("map rewrites components in place (d must equal r)")
            if not (1 <= self.k <= 9 and 0 <= self.b <= 9):
                raise InvalidRule(f"map parameters out of range: k={self.k}, b={self.b}")
            if (self.k, self.b) == (1, 0):
                raise InvalidRule("map with k=1, b=0 is the identity")
        elif kind == "pad":
            if d:
                raise InvalidRule("pad takes no source indices")
            if not 0 <= self.c <= 9:
                raise InvalidRule(f"pad constant out of range: c={self.c}")
        elif kind == "swap":
            if len(d) != len(r) or set(d) & set(r):
                raise InvalidRule("swap needs equally sized, disjoint index vectors")

    @property
    def params(self) -> dict:
        return {name: getattr(self, name) for name in ("k", "b", "c") if getattr(self, name) is not None}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": list(self.d), "r": list(self.r),
                "params": self.params, "dim": self.dim}

    @classmethod
    def from_dict(cls, data: dict) -> "MetaRule":
        return cls(data["kind"], tuple(data["d"]), tuple(data["r"]), int(data["dim"]),
                   **{k: int(v) for k, v in data.get("params", {}).items()})

    @property
    def rule_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def sort_key(self):
        return (KINDS.index(self.kind), self.d, self.r, (self.k or 0, self.b or 0, self.c or 0))

    # uniform evaluation interface shared with parsed rules
    def evaluate(self, x):
        return apply_rule(self, x)

    def evaluate_string(self, x):
        return apply_rule_string(self, x)

    def evaluate_batch(self, X):
        return apply_rule_batch(self, X)

    def evaluate_string_batch(self, S):
        return apply_rule_string_batch(self, S)

    def __str__(self):
        return rule_text(self)


def _check_dim(rule, x):
    if len(x) != rule.dim:
        raise DimensionMismatch(f"vector has dimension {len(x)}, rule expects {rule.dim}")


def apply_rule(rule: MetaRule, x) -> tuple:
    """Apply ``rule`` to an integer vector; every read comes from ``x``."""
    _check_dim(rule, x)
    y = list(x)
    kind = rule.kind
    if kind == "add":
        total = sum(x[i] for i in rule.d)
        for j in rule.r:
            y[j] = total
    elif kind == "copy":
        for j in rule.r:
            y[j] = x[rule.d[0]]
    elif kind == "map":
        for i, j in zip(rule.d, rule.r):
            y[j] = rule.k * x[i] + rule.b
    elif kind == "pad":
        for j in rule.r:
            y[j] = rule.c
    else:
        for i, j in zip(rule.d, rule.r):
            y[j] = x[i]
            y[i] = x[j]
    return tuple(y)


def _const_string(value: int) -> str:
    # zero is the empty string; other constants use the digit->letter map
    return letter(value) if value else ""


def apply_rule_string(rule: MetaRule, x) -> tuple:
    """String interpretation: sums concatenate, products replicate."""
    _check_dim(rule, x)
    for comp in x:
        if not isinstance(comp, str) or any(ch not in LETTERS for ch in comp):
            raise InvalidAlphabet(f"component {comp!r} is not a string over a-j")
    y = list(x)
    kind = rule.kind
    if kind == "add":
        joined = "".join(x[i] for i in rule.d)
        for j in rule.r:
            y[j] = joined
    elif kind == "copy":
        for j in rule.r:
            y[j] = x[rule.d[0]]
    elif kind == "map":
        for i, j in zip(rule.d, rule.r):
            y[j] = x[i] * rule.k + _const_string(rule.b)
    elif kind == "pad":
        for j in rule.r:
            y[j] = _const_string(rule.c)
    else:
        for i, j in zip(rule.d, rule.r):
            y[j] = x[i]
            y[i] = x[j]
    return tuple(y)


def apply_rule_batch(rule: MetaRule, X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != rule.dim:
        raise DimensionMismatch(f"batch has shape {X.shape}, rule expects (n, {rule.dim})")
    Y = X.copy()
    d, r = list(rule.d), list(rule.r)
    if rule.kind == "add":
        Y[:, r] = X[:, d].sum(axis=1, keepdims=True)
    elif rule.kind == "copy":
        Y[:, r] = X[:, d]
    elif rule.kind == "map":
        Y[:, r] = rule.k * X[:, d] + rule.b
    elif rule.kind == "pad":
        Y[:, r] = rule.c
    else:
        Y[:, r] = X[:, d]
        Y[:, d] = X[:, r]
    return Y


def apply_rule_string_batch(rule: MetaRule, S) -> np.ndarray:
    """Batch string interpretation over an object array of shape (n, dim)."""
    S = np.asarray(S, dtype=object)
    if S.ndim != 2 or S.shape[1] != rule.dim:
        raise DimensionMismatch(f"batch has shape {S.shape}, rule expects (n, {rule.dim})")
    Y = S.copy()
    d, r = list(rule.d), list(rule.r)
    if rule.kind == "add":
        joined = S[:, d[0]]
        for i in d[1:]:
            joined = joined + S[:, i]
        for j in r:
            Y[:, j] = joined
    elif rule.kind == "copy":
        for j in r:
            Y[:, j] = S[:, d[0]]
    elif rule.kind == "map":
        tail = _const_string(rule.b)
        for i, j in zip(d, r):
            Y[:, j] = S[:, i] * rule.k + tail
    elif rule.kind == "pad":
        for j in r:
            Y[:, j] = _const_string(rule.c)
    else:
        Y[:, r] = S[:, d]
        Y[:, d] = S[:, r]
    return Y


# ---------------------------------------------------------------- rendering

def slot_expressions(rule: MetaRule, string_mode: bool = False) -> list[str]:
    """Canonical per-slot expression text, e.g. ``["B+C", "B+C", "C"]``."""
    slots = [variable(j) for j in range(rule.dim)]
    kind = rule.kind
    if kind == "add":
        expr = ("" if string_mode else "+").join(variable(i) for i in rule.d)
        for j in rule.r:
            slots[j] = expr
    elif kind == "copy":
        for j in rule.r:
            slots[j] = variable(rule.d[0])
    elif kind == "map":
        for i, j in zip(rule.d, rule.r):
            if string_mode:
                slots[j] = variable(i) * rule.k + _const_string(rule.b)
            else:
                term = variable(i) if rule.k == 1 else f"{rule.k}*{variable(i)}"
                slots[j] = term if rule.b == 0 else f"{term}+{rule.b}"
    elif kind == "pad":
        for j in rule.r:
            if string_mode:
                slots[j] = _const_string(rule.c) or "''"
            else:
                slots[j] = str(rule.c)
    else:
        for i, j in zip(rule.d, rule.r):
            slots[j], slots[i] = variable(i), variable(j)
    return slots


def rule_text(rule: MetaRule, string_mode: bool = False) -> str:
    """Canonical rule text: ``[A, B, C] -> [B+C, B+C, C]``."""
    lhs = ", ".join(variable(j) for j in range(rule.dim))
    rhs = ", ".join(slot_expressions(rule, string_mode))
    return f"[{lhs}] -> [{rhs}]"


# ---------------------------------------------------------------- sampling

def _random_subset(dim: int, rng: random.Random, min_size: int = 1) -> tuple:
    while True:
        mask = rng.getrandbits(dim)
        if bin(mask).count("1") >= min_size:
            return tuple(i for i in range(dim) if mask >> i & 1)


@lru_cache(maxsize=None)
def _matchings(dim: int) -> tuple:
    """All non-empty sets of disjoint index pairs, as canonical (d, r)."""
    out = []

    def extend(start, used, pairs):
        if pairs:
            out.append(_pairs_sorted([p[0] for p in pairs], [p[1] for p in pairs]))
        for i in range(start, dim):
            if i in used:
                continue
            for j in range(i + 1, dim):
                if j in used:
                    continue
                extend(i + 1, used | {i, j}, pairs + [(i, j)])

    extend(0, frozenset(), [])
    return tuple(sorted(set(out)))


def is_identity(rule: MetaRule) -> bool:
    """Brute-force identity check over the whole input domain (dim <= 5)."""
    X = exhaustive_points(rule.dim)
    return bool(np.array_equal(apply_rule_batch(rule, X), X))


def sample_rule(dim: int, rng: random.Random, attempt_cap: int = 1000) -> MetaRule:
    """Uniform operation kind, then a uniform valid configuration for it."""
    if dim < 2:
        raise InvalidRule(f"dimension must be at least 2, got {dim}")
    for _ in range(attempt_cap):
        kind = rng.choice(KINDS)
        try:
            if kind == "add":
                return MetaRule("add", _random_subset(dim, rng, 2), _random_subset(dim, rng), dim)
            if kind == "copy":
                src = rng.randrange(dim)
                return MetaRule("copy", (src,), _random_subset(dim, rng), dim)
            if kind == "map":
                r = _random_subset(dim, rng)
                return MetaRule("map", r, r, dim, k=rng.randint(1, 9), b=rng.randint(0, 9))
            if kind == "pad":
                return MetaRule("pad", (), _random_subset(dim, rng), dim, c=rng.randint(0, 9))
            d, r = rng.choice(_matchings(dim))
            return MetaRule("swap", d, r, dim)
        except InvalidRule:
            continue  # identity draws are resampled
    raise GenerationExhausted(f"no valid rule after {attempt_cap} draws at dim={dim}")


def sample_rules(dim: int, count: int, rng: random.Random, attempt_cap: int = 10000) -> list[MetaRule]:
    """Sample ``count`` structurally distinct rules."""
    seen, out = set(), []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > attempt_cap:
            raise GenerationExhausted(f"could not draw {count} distinct rules at dim={dim}")
        rule = sample_rule(dim, rng)
        if rule not in seen:
            seen.add(rule)
            out.append(rule)
    return out


# ---------------------------------------------------------------- enumeration

def _subsets(dim: int, min_size: int = 1) -> list[tuple]:
    return sorted(
        c for size in range(min_size, dim + 1) for c in itertools.combinations(range(dim), size)
    )


@lru_cache(maxsize=8)
def _all_rules(dim: int) -> tuple:
    rules = []
    targets = _subsets(dim)
    for d in _subsets(dim, 2):
        rules.extend(MetaRule("add", d, r, dim) for r in targets)
    for src in range(dim):
        rules.extend(MetaRule("copy", (src,), r, dim) for r in targets if r != (src,))
    for r in targets:
        rules.extend(MetaRule("map", r, r, dim, k=k, b=b)
                     for k in range(1, 10) for b in range(10) if (k, b) != (1, 0))
    for r in targets:
        rules.extend(MetaRule("pad", (), r, dim, c=c) for c in range(10))
    rules.extend(MetaRule("swap", d, r, dim) for d, r in _matchings(dim))
    return tuple(sorted(rules, key=MetaRule.sort_key))


def enumerate_rules(dim: int):
    """Yield every valid rule at ``dim`` once, ordered by kind, d, r, params."""
    if dim < 2:
        raise InvalidRule(f"dimension must be at least 2, got {dim}")
    yield from _all_rules(dim)


def rules_structurally_equal(f: MetaRule, g: MetaRule) -> bool:
    return f == g


# ---------------------------------------------------------------- equivalence

@dataclass(frozen=True)
class EquivalencePolicy:
    """How two rules are compared as functions.

    ``auto`` probes the whole domain up to ``exhaustive_max_dim`` and falls
    back to ``samples`` seeded uniform probes plus axis-aligned points above.
    """

    mode: str = "auto"
    exhaustive_max_dim: int = 5
    samples: int = 10_000
    seed: int = 0

    def is_exhaustive(self, dim: int) -> bool:
        if self.mode == "exhaustive":
            return True
        if self.mode == "sampled":
            return False
        return dim <= self.exhaustive_max_dim


@lru_cache(maxsize=8)
def exhaustive_points(dim: int) -> np.ndarray:
    """Every vector of [0, 9]^dim in lexicographic order."""
    pts = np.indices((10,) * dim).reshape(dim, -1).T
    pts.setflags(write=False)
    return pts


def axis_points(dim: int) -> np.ndarray:
    """The 10*dim vectors that are zero except for one coordinate."""
    pts = np.zeros((10 * dim, dim), dtype=np.int64)
    for i in range(dim):
        pts[10 * i:10 * (i + 1), i] = np.arange(10)
    return pts


def probe_points(dim: int, policy: EquivalencePolicy | None = None) -> np.ndarray:
    policy = policy or EquivalencePolicy()
    if policy.is_exhaustive(dim):
        return exhaustive_points(dim)
    rng = np.random.default_rng(policy.seed)
    sampled = rng.integers(0, 10, size=(policy.samples, dim))
    return np.vstack([axis_points(dim), sampled])


def to_letters_batch(X: np.ndarray) -> np.ndarray:
    table = np.array(list(LETTERS), dtype=object)
    return table[np.asarray(X)]


def find_disagreement(f, g, policy: EquivalencePolicy | None = None, string_mode: bool = False,
                      hints=()):
    """Return the first probe input where ``f`` and ``g`` differ, or None.

    ``f`` and ``g`` are anything with ``evaluate_batch`` /
    ``evaluate_string_batch`` (rules or parsed rules).  ``hints`` are probed
    before the policy's points.
    """
    if f.dim != g.dim:
        raise DimensionMismatch(f"cannot compare dim {f.dim} with dim {g.dim}")
    blocks = []
    if len(hints):
        blocks.append(np.asarray(hints, dtype=np.int64).reshape(-1, f.dim))
    blocks.append(probe_points(f.dim, policy))
    for X in blocks:
        if string_mode:
            S = to_letters_batch(X)
            diff = np.any(f.evaluate_string_batch(S) != g.evaluate_string_batch(S), axis=1)
        else:
            diff = np.any(f.evaluate_batch(X) != g.evaluate_batch(X), axis=1)
        hits = np.flatnonzero(diff)
        if hits.size:
            return tuple(int(v) for v in X[hits[0]])
    return None


def rules_semantically_equivalent(f, g, policy: EquivalencePolicy | None = None,
                                  string_mode: bool = False) -> bool:
    return find_disagreement(f, g, policy, string_mode) is None
