"""Dataset generation and JSON Lines persistence.

A dataset file starts with one ``{"_meta": ...}`` line holding the resolved
config and seed, followed by one record per (task, scenario, kind).
"""
from __future__ import annotations

import json
import os
import random

import jsonschema

from ..errors import GenerationExhausted, MirageError, SchemaError
from ..facts import (DistanceMetric, Fact, FactClass, FactSet, GenerationConstraint, classify_fact,
                     generate_fact_set, perturb_fact_set, sample_input, sample_task_rules, sample_test_inputs)
from ..render import EI, RI, Scenario, expected_answer
from ..rules import MetaRule, rule_text
from .config import ExperimentConfig

X_T_ATTEMPTS = 200

_vec = {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 9}}

RECORD_SCHEMA = {
    "type": "object",
    "required": ["id", "task_id", "scenario", "task", "rule", "rule_id", "facts", "perturbed_index",
                 "x_t", "expected", "extra_inputs", "extra_expected", "fact_classes", "tags", "lineage"],
    "properties": {
        "id": {"type": "string"},
        "task_id": {"type": "string"},
        "scenario": {"type": "string"},
        "task": {"enum": [RI, EI]},
        "rule": {"type": "object", "required": ["kind", "d", "r", "params", "dim"]},
        "rule_id": {"type": "string"},
        "facts": {"type": "array", "minItems": 1,
                  "items": {"type": "array", "minItems": 2, "maxItems": 2,
                            "items": {"type": "array", "items": {"type": "integer"}}}},
        "perturbed_index": {"type": ["integer", "null"]},
        "x_t": _vec,
        "extra_inputs": {"type": "array", "items": _vec},
        "extra_expected": {"type": "array"},
        "fact_classes": {"type": ["array", "null"], "items": {"enum": ["IF", "CF", "OF"]}},
        "tags": {"type": "object"},
        "lineage": {"type": "object", "required": ["seed", "cell", "index"]},
    },
}
_VALIDATOR = jsonschema.Draft7Validator(RECORD_SCHEMA)


_INT_ONLY = frozenset([int])


def _ints(v, digits=False) -> bool:
    if type(v) is not list:
        return False
    if not v:
        return True
    if not _INT_ONLY.issuperset(map(type, v)):
        return False
    return not digits or (min(v) >= 0 and max(v) <= 9)


def shape_ok(rec) -> bool:
    """Plain-Python twin of RECORD_SCHEMA; jsonschema is only consulted to explain a failure."""
    if type(rec) is not dict or any(k not in rec for k in RECORD_SCHEMA["required"]):
        return False
    rule, lineage, classes, pi = rec["rule"], rec["lineage"], rec["fact_classes"], rec["perturbed_index"]
    return (all(type(rec[k]) is str for k in ("id", "task_id", "scenario", "rule_id"))
            and rec["task"] in (RI, EI)
            and type(rule) is dict and all(k in rule for k in ("kind", "d", "r", "params", "dim"))
            and type(rec["facts"]) is list and len(rec["facts"]) >= 1
            and all(type(f) is list and len(f) == 2 and _ints(f[0]) and _ints(f[1]) for f in rec["facts"])
            and (pi is None or type(pi) is int)
            and _ints(rec["x_t"], digits=True)
            and type(rec["extra_inputs"]) is list and all(_ints(x, digits=True) for x in rec["extra_inputs"])
            and type(rec["extra_expected"]) is list
            and (classes is None or (type(classes) is list and all(c in ("IF", "CF", "OF") for c in classes)))
            and type(rec["tags"]) is dict
            and type(lineage) is dict and all(k in lineage for k in ("seed", "cell", "index")))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def cell_rng(seed: int, cell_key: str) -> random.Random:
    # string seeds are hashed deterministically by random.Random
    return random.Random(f"{seed}:{cell_key}")


def _draw_task(rule, cell, metric, rng):
    """Test input and fact set for one task, retrying the test input if its cell is infeasible."""
    last = None
    for _ in range(X_T_ATTEMPTS):
        x_t = sample_input(rule.dim, rng)
        if cell.fact_class is None:
            constraint = GenerationConstraint(x_t=x_t)
        else:
            constraint = GenerationConstraint(x_t, cell.epsilon, FactClass(cell.fact_class), metric)
        try:
            return x_t, generate_fact_set(rule, cell.size, constraint, rng)
        except GenerationExhausted as exc:
            last = exc
    raise GenerationExhausted(f"cell {cell.key}: no feasible test input found ({last})")


def generate_dataset(cfg: ExperimentConfig) -> list[dict]:
    """Deterministic records for every cell, scenario and task of ``cfg``."""
    records = []
    metric = cfg.metric
    n_extra = cfg.test_region["n"]
    for cell in cfg.cells():
        rng = cell_rng(cfg.seed, cell.key)
        rules = sample_task_rules(cell.dim, cfg.samples, rng)
        for index, rule in enumerate(rules):
            x_t, fs = _draw_task(rule, cell, metric, rng)
            if cell.perturbed:
                fs = perturb_fact_set(fs, rng)
            extras = sample_test_inputs(x_t, cell.eta, n_extra, fs.inputs, rng) if n_extra else []
            classes = None
            if cell.fact_class is not None:
                classes = [str(classify_fact(x, x_t, cell.epsilon, metric)) for x in fs.inputs]
            task_id = f"{cell.key}-{index:04d}"
            for scenario_text in cfg.scenarios:
                scenario = Scenario.parse(scenario_text)
                for task in cfg.tasks:
                    records.append(_record(task_id, scenario, task, rule, fs, x_t, extras, classes,
                                           cell, cfg.seed, index, metric))
    return records


def _expected(rule, task, scenario, x_t):
    if task == RI:
        return rule_text(rule, scenario.string_mode)
    return list(expected_answer(rule, x_t, scenario))


def _record(task_id, scenario, task, rule, fs, x_t, extras, classes, cell, seed, index, metric) -> dict:
    return {
        "id": f"{task_id}-{scenario}-{task}",
        "task_id": task_id,
        "scenario": str(scenario),
        "task": task,
        "rule": rule.to_dict(),
        "rule_id": rule.rule_id,
        "facts": [f.to_list() for f in fs.facts],
        "perturbed_index": fs.perturbed_index,
        "x_t": list(x_t),
        "expected": _expected(rule, task, scenario, x_t),
        "extra_inputs": [list(x) for x in extras] if task == EI else [],
        "extra_expected": [_expected(rule, task, scenario, x) for x in extras] if task == EI else [],
        "fact_classes": classes,
        "tags": {**cell.tags(), "metric": str(metric)},
        "lineage": {"seed": seed, "cell": cell.key, "index": index},
    }


def record_objects(rec: dict, memo: dict | None = None):
    """(rule, fact set, scenario) rebuilt from a record, with every invariant re-checked.

    ``memo`` lets records that share a task (same rule and facts) skip rebuilding them.
    """
    if not shape_ok(rec):
        errors = sorted(_VALIDATOR.iter_errors(rec), key=lambda e: list(e.absolute_path))
        if not errors:
            raise ValueError("malformed record")
        where = "/".join(str(p) for p in errors[0].absolute_path) or "(root)"
        raise ValueError(f"{where}: {errors[0].message}")
    facts = tuple(Fact(tuple(x), tuple(y)) for x, y in rec["facts"])
    key = (json.dumps(rec["rule"], sort_keys=True), rec["rule_id"], facts, rec["perturbed_index"])
    if memo is not None and key in memo:
        rule, fs = memo[key]
    else:
        rule = MetaRule.from_dict(rec["rule"])
        if rule.rule_id != rec["rule_id"]:
            raise ValueError("rule_id does not match the rule")
        fs = FactSet(rule, facts, rec["perturbed_index"])
        if memo is not None:
            memo[key] = rule, fs
    scenario = Scenario.parse(rec["scenario"])
    x_t = tuple(rec["x_t"])
    if len(x_t) != rule.dim:
        raise ValueError("x_t has the wrong dimension")
    if x_t in set(fs.inputs):
        raise ValueError("x_t is one of the fact inputs")
    if _expected(rule, rec["task"], scenario, x_t) != rec["expected"]:
        raise ValueError("expected answer does not follow from the rule")
    if len(rec["extra_inputs"]) != len(rec["extra_expected"]):
        raise ValueError("extra inputs and expected answers differ in length")
    for x, want in zip(rec["extra_inputs"], rec["extra_expected"]):
        if _expected(rule, rec["task"], scenario, tuple(x)) != want:
            raise ValueError(f"expected answer for extra input {x} does not follow from the rule")
    tags = rec["tags"]
    if rec["fact_classes"] is not None:
        metric = DistanceMetric.parse(tags.get("metric", "chebyshev"))
        got = [str(classify_fact(x, x_t, tags.get("epsilon", 0), metric)) for x in fs.inputs]
        if got != rec["fact_classes"]:
            raise ValueError("fact class annotations do not match the facts")
    return rule, fs, scenario


def validate_records(records, line_numbers=None):
    memo = {}
    for offset, rec in enumerate(records):
        try:
            record_objects(rec, memo)
        except (MirageError, ValueError, KeyError, TypeError) as exc:
            line = line_numbers[offset] if line_numbers else offset + 2
            raise SchemaError(str(exc), line) from None


def write_jsonl(path, meta: dict, rows):
    """Write atomically: meta line first, then one row per line."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps({"_meta": meta}) + "\n")
        for row in rows:
            fh.write(dumps(row) + "\n")
    os.replace(tmp, path)


def read_jsonl(path, with_lines: bool = False):
    """(meta, rows) from a file written by ``write_jsonl``; malformed lines raise SchemaError.

    With ``with_lines`` the source line number of each row is returned too.
    """
    meta, rows, lines = None, [], []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise SchemaError(f"not valid JSON: {exc}", number) from None
            if number == 1 and isinstance(obj, dict) and "_meta" in obj:
                meta = obj["_meta"]
                continue
            if not isinstance(obj, dict):
                raise SchemaError("each line must hold a JSON object", number)
            rows.append(obj)
            lines.append(number)
    return (meta, rows, lines) if with_lines else (meta, rows)


def dataset_meta(cfg: ExperimentConfig) -> dict:
    return {"kind": "dataset", "config": cfg.to_dict(), "seed": cfg.seed}


def save_dataset(path, cfg: ExperimentConfig, records):
    write_jsonl(path, dataset_meta(cfg), records)


def load_dataset(path):
    """(config, records); every record is revalidated and errors carry the line number."""
    meta, rows, lines = read_jsonl(path, with_lines=True)
    if meta is None or meta.get("kind") != "dataset":
        raise SchemaError("missing dataset header", 1)
    validate_records(rows, lines)
    return ExperimentConfig.from_dict(meta["config"]), rows
