"""End-to-end runs: render, query, parse, judge and persist."""
from __future__ import annotations

import os
import random
from concurrent.futures import ThreadPoolExecutor

from ..errors import ConfigError, MirageError, TransportError, FormatError, ParseError, ArityError
from ..facts import FactSet, GenerationConstraint, generate_fact_set, sample_input, sample_task_rules
from ..grade import (UNPARSEABLE, Judgment, grade_response, parse_answer_response,
                     parse_rule_response)
from ..metrics import TaskResult, compute_thresholds
from ..render import (EI, RI, Scenario, expected_answer_text, render_arithmetic_probe, render_question,
                      rule_stanza, scaffold_for)
from ..rules import EquivalencePolicy
from ..solvers import hypothesis_refine, self_consistency, self_refine
from .clients import CRITIQUE_MARKER, UNKNOWN_REPLY
from .config import ExperimentConfig
from .dataset import cell_rng, dumps, read_jsonl, record_objects

APPROVAL_HINT = "Reply 'correct' if the rule explains every fact; otherwise explain what is wrong."


def policy_for(cfg: ExperimentConfig) -> EquivalencePolicy:
    eq = cfg.equivalence
    return EquivalencePolicy(eq["mode"], eq["exhaustive_max_dim"], eq["samples"], cfg.seed)


def _prepare(client, question):
    if hasattr(client, "prepare"):
        client.prepare(question)


def question_for(rec: dict, cfg: ExperimentConfig, x_t=None):
    """Rebuild the rendered question of a record (or of one of its extra points)."""
    rule, fs, scenario = record_objects(rec)
    method = cfg.method
    name = method["name"]
    task = rec["task"]
    test_input = None
    if task == EI:
        test_input = tuple(x_t if x_t is not None else rec["x_t"])
    rng = random.Random(f"{cfg.seed}:{rec['id']}:{list(test_input) if x_t is not None else ''}")
    return render_question(fs, task, scenario, test_input, shots=method["shots"], rng=rng,
                           scaffold=scaffold_for(name, task) if name not in ("SR", "HR") else None,
                           metadata={"record": rec["id"]})


class ModelProposer:
    """Proposer backed by a model client; candidates are returned as canonical rule text."""

    def __init__(self, client, scenario, params=None, seed=0):
        self.client = client
        self.scenario = Scenario.parse(scenario)
        self.params = dict(params or {})
        self.seed = seed
        self.responses = []

    def _question(self, fs):
        q = render_question(fs, RI, self.scenario, rng=random.Random(self.seed))
        _prepare(self.client, q)
        return q

    def propose(self, fs, feedback=None, n=1):
        prompt = self._question(fs).prompt
        if feedback is not None:
            prompt += "\nFeedback on your previous answer:\n" + feedback.text + "\nPlease give an improved rule.\n"
        texts = self.client.complete(prompt, {**self.params, "n": n})
        self.responses.extend(texts)
        out = []
        for text in texts:
            try:
                out.append(str(parse_rule_response(text, self.scenario, fs.dim)))
            except (FormatError, ParseError, ArityError):
                out.append(text)
        return out

    def critique(self, fs, rule):
        prompt = self._question(fs).prompt + f"\n{CRITIQUE_MARKER} {rule}\n{APPROVAL_HINT}\n"
        text = self.client.complete(prompt, {**self.params, "n": 1})[0]
        self.responses.append(text)
        return text


def _final_from_rule(parsed, question):
    if parsed is None:
        return None
    if question.task == RI:
        return rule_stanza(parsed.slot_texts(), question.scenario)
    return expected_answer_text(parsed.evaluate(question.test_input), question.scenario)


def _sc_pick(texts, question, policy):
    dim = question.rule.dim
    parsed = []
    for text in texts:
        try:
            if question.task == RI:
                parsed.append((parse_rule_response(text, question.scenario, dim), text))
            else:
                parsed.append((parse_answer_response(text, question.scenario, dim), text))
        except (FormatError, ParseError, ArityError):
            continue
    if not parsed:
        return texts[0]
    winner = self_consistency([p for p, _ in parsed], policy)
    return next(text for p, text in parsed if p is winner)


def ask(client, question, cfg: ExperimentConfig, policy: EquivalencePolicy, fs: FactSet | None = None) -> dict:
    """Query ``client`` under the configured method and judge the final reply."""
    method = cfg.method
    name = method["name"]
    params = {"temperature": method["temperature"], "max_tokens": cfg.model["max_tokens"]}
    out = {"prompt": question.prompt, "responses": [], "final": None, "trace": None}
    _prepare(client, question)
    try:
        if name in ("IO", "ID", "CoT"):
            out["responses"] = client.complete(question.prompt, {**params, "n": 1})
            out["final"] = out["responses"][0]
        elif name == "SC":
            out["responses"] = client.complete(question.prompt, {**params, "n": method["n"]})
            out["final"] = _sc_pick(out["responses"], question, policy)
        else:
            if fs is None:
                raise ConfigError(f"method {name} needs the fact set")
            proposer = ModelProposer(client, question.scenario, params, cfg.seed)
            if name == "HR":
                best, trace = hypothesis_refine(proposer, fs, method["t"], method["n"], method["max_errors"])
            else:
                best, trace = self_refine(proposer, fs, method["t"])
            out["responses"] = proposer.responses
            out["trace"] = trace.to_dict()
            out["final"] = _final_from_rule(best, question) or (proposer.responses or [UNKNOWN_REPLY])[-1]
    except TransportError as exc:
        out["judgment"] = Judgment(UNPARSEABLE, f"TransportError: {exc}").to_dict()
        out["transport_error"] = True
        return out
    except MirageError as exc:
        if isinstance(exc.__cause__, TransportError):
            out["judgment"] = Judgment(UNPARSEABLE, f"TransportError: {exc.__cause__}").to_dict()
            out["transport_error"] = True
            return out
        raise
    out["judgment"] = grade_response(question, out["final"], policy).to_dict()
    return out


def _task_result(rec, row, cfg, model_id) -> TaskResult:
    tags = dict(rec["tags"])
    tags.update({"method": cfg.method["name"], "shots": cfg.method["shots"], "model": model_id})
    return TaskResult(rec["task_id"], rec["rule_id"], rec["scenario"], rec["task"],
                      Judgment.from_dict(row["judgment"]), tuple(rec["x_t"]),
                      [Judgment.from_dict(e["judgment"]) for e in row["extra"]], tags)


def results_meta(cfg: ExperimentConfig, model_id: str) -> dict:
    return {"kind": "results", "config": cfg.to_dict(), "seed": cfg.seed, "model": model_id}


def run_record(rec, client, cfg, policy) -> dict:
    _, fs, _ = record_objects(rec)
    question = question_for(rec, cfg)
    row = {"record": rec}
    row.update(ask(client, question, cfg, policy, fs))
    row["extra"] = []
    for x in rec["extra_inputs"]:
        answer = ask(client, question_for(rec, cfg, x), cfg, policy, fs)
        answer["x"] = list(x)
        row["extra"].append(answer)
    row["result"] = _task_result(rec, row, cfg, client.model_id).to_dict()
    return row


def run_experiment(cfg: ExperimentConfig, client, records=None, results_path=None,
                   policy: EquivalencePolicy | None = None, workers: int = 1) -> list[TaskResult]:
    """Judge every record; rows are appended to ``results_path`` as they finish.

    An existing results file for the same config and model is resumed: its
    records are kept and not queried again.
    """
    from .dataset import generate_dataset
    records = generate_dataset(cfg) if records is None else list(records)
    policy = policy or policy_for(cfg)
    meta = results_meta(cfg, client.model_id)
    done = {}
    if results_path and os.path.exists(results_path) and os.path.getsize(results_path):
        old_meta, old_rows = _read_partial(results_path)
        if old_meta != meta:
            raise ConfigError(f"{results_path} was produced by a different config or model")
        done = {row["record"]["id"]: row for row in old_rows}
    elif results_path:
        with open(results_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps({"_meta": meta}) + "\n")
    todo = [rec for rec in records if rec["id"] not in done]
    rows_by_id = dict(done)
    fh = open(results_path, "a", encoding="utf-8", newline="\n") if results_path else None
    try:
        def work(rec):
            return run_record(rec, client, cfg, policy)
        if workers > 1:
            pool = ThreadPoolExecutor(max_workers=workers)
            produced = pool.map(work, todo)
        else:
            pool, produced = None, map(work, todo)
        for row in produced:
            rows_by_id[row["record"]["id"]] = row
            if fh:
                fh.write(dumps(row) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        if pool:
            pool.shutdown()
    finally:
        if fh:
            fh.close()
    return [TaskResult.from_dict(rows_by_id[rec["id"]]["result"]) for rec in records]


def _read_partial(path):
    """Results read for resuming: a torn final line (crash mid-write) is dropped."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.readlines()
    if lines and not lines[-1].endswith("\n"):
        lines = lines[:-1]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    return read_jsonl(path)


def load_results(path):
    """(meta, rows, TaskResults) from a results file."""
    meta, rows = read_jsonl(path)
    return meta, rows, [TaskResult.from_dict(r["result"]) for r in rows]


def rescore(rows, cfg: ExperimentConfig, model_id: str, policy: EquivalencePolicy | None = None) -> list[TaskResult]:
    """Re-judge the stored final replies; transport failures keep their stored judgment."""
    policy = policy or policy_for(cfg)
    out = []
    for row in rows:
        rec = row["record"]
        new = dict(row)
        new["judgment"] = _rejudge(question_for(rec, cfg), row, policy)
        new["extra"] = [dict(e, judgment=_rejudge(question_for(rec, cfg, e["x"]), e, policy))
                        for e in row["extra"]]
        out.append(_task_result(rec, new, cfg, model_id))
    return out


def _rejudge(question, stored, policy):
    if stored.get("final") is None:
        return stored["judgment"]
    return grade_response(question, stored["final"], policy).to_dict()


# ---------------------------------------------------------------- probes and thresholds

def run_probes(client, n: int, seed: int = 0, kinds=("map", "add"), params=None) -> list[TaskResult]:
    """Bare arithmetic questions, ``n`` per kind."""
    results = []
    for kind in kinds:
        rng = random.Random(f"{seed}:probe:{kind}")
        for i in range(n):
            q = render_arithmetic_probe(kind, rng)
            _prepare(client, q)
            try:
                text = client.complete(q.prompt, {**(params or {}), "n": 1})[0]
                judgment = grade_response(q, text)
            except TransportError as exc:
                judgment = Judgment(UNPARSEABLE, f"TransportError: {exc}")
            results.append(TaskResult(f"probe-{kind}-{i:04d}", None, "LT", "probe", judgment,
                                      tags={"probe": kind, "model": client.model_id}))
    return results


class ClientSolver:
    """Adapts a model client to the induce/deduce interface used for thresholds."""

    def __init__(self, client, scenario="LT", params=None, seed=0):
        self.client = client
        self.scenario = Scenario.parse(scenario)
        if self.scenario.string_mode:
            raise ConfigError("threshold sweeps compare numeric answers; use a numeric scenario")
        self.params = dict(params or {})
        self.seed = seed

    def _ask(self, q):
        _prepare(self.client, q)
        return self.client.complete(q.prompt, {**self.params, "n": 1})[0]

    def induce(self, fs):
        q = render_question(fs, RI, self.scenario, rng=random.Random(self.seed))
        return parse_rule_response(self._ask(q), self.scenario, fs.dim)

    def deduce(self, fs, x_t):
        q = render_question(fs, EI, self.scenario, tuple(x_t), rng=random.Random(self.seed))
        return parse_answer_response(self._ask(q), self.scenario, fs.dim)


def threshold_tasks(cfg: ExperimentConfig, max_n: int):
    """(rule, facts, x_t, tags) streams of ``max_n`` facts per configured dimension and sample."""
    for dim in cfg.dims:
        rng = cell_rng(cfg.seed, f"thresholds-D{dim}-N{max_n}")
        for index, rule in enumerate(sample_task_rules(dim, cfg.samples, rng)):
            x_t = sample_input(dim, rng)
            fs = generate_fact_set(rule, max_n, GenerationConstraint(x_t=x_t), rng)
            yield rule, fs, x_t, {"dim": dim, "index": index, "rule_id": rule.rule_id}


def run_thresholds(cfg: ExperimentConfig, solver, max_n: int, policy=None) -> list[dict]:
    policy = policy or policy_for(cfg)
    rows = []
    for rule, fs, x_t, tags in threshold_tasks(cfg, max_n):
        rec = compute_thresholds(solver, rule, fs, x_t, max_n, policy)
        rows.append({**tags, **rec.to_dict()})
    return rows


__all__ = ["ModelProposer", "ClientSolver", "ask", "question_for", "run_record", "run_experiment",
           "load_results", "rescore", "run_probes", "run_thresholds", "threshold_tasks", "policy_for",
           "results_meta"]
