import json
import os
import time

import httpx
import jsonschema
import pytest
from hypothesis import given, strategies as st

from mirage.errors import CacheCorruption, ConfigError, SchemaError, TransportError
from mirage.harness import (CachedClient, ClientSolver, ExperimentConfig, NeverCorrectClient, OracleClient,
                            RandomClient, RemoteChatClient, ScriptedClient, build_client, generate_dataset,
                            load_dataset, load_results, read_jsonl, rescore, run_experiment, run_probes,
                            run_thresholds, save_dataset)
from mirage.harness.clients import UNKNOWN_REPLY, question_key, reply_format
from mirage.harness.dataset import RECORD_SCHEMA, shape_ok
from mirage.harness.experiment import question_for
from mirage.metrics import accuracy, report
from mirage.solvers import EnumerativeSolver

SMALL = {"seed": 3, "samples": 2, "scenarios": ["LT", "RP:diet", "CG", "ST"]}


def cfg_of(**kw):
    return ExperimentConfig.from_dict({**SMALL, **kw})


# ---------------------------------------------------------------- config

def test_defaults_and_overrides():
    cfg = ExperimentConfig.from_dict({}, seed=9)
    assert cfg.seed == 9 and cfg.dims == [3] and cfg.method_name == "IO"
    assert cfg.with_overrides(method={"name": "SC"}).method["n"] == 5
    assert cfg.to_dict()["model"]["concurrency"] == 4


def test_load_yaml_and_json(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("seed: 4\ndims: [3, 5]\nmethod:\n  name: CoT\n")
    cfg = ExperimentConfig.load(y)
    assert cfg.dims == [3, 5] and cfg.method_name == "CoT"
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"samples": 7}))
    assert ExperimentConfig.load(j, seed=1).samples == 7
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.yaml")


@pytest.mark.parametrize("raw", [
    {"dims": [1]},
    {"unknown": 1},
    {"method": {"name": "magic"}},
    {"scenarios": ["XX"]},
    {"dims": [9], "scenarios": ["RP:trade"]},
    {"method": {"name": "HR"}, "scenarios": ["ST"]},
    {"constraint": {"classes": ["CF"], "metric": "euclidean"}},
    {"constraint": {"metric": "hamming"}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_cells_skip_irrelevant_epsilons():
    cfg = ExperimentConfig.from_dict({"constraint": {"classes": [None, "IF"], "epsilons": [1, 2]},
                                      "test_region": {"etas": [1, None], "n": 5}})
    keys = [c.key for c in cfg.cells()]
    assert len(keys) == 2 + 4
    assert "D3-N5-any-e0-h1-c" in keys and "D3-N5-IF-e2-hinf-c" in keys


# ---------------------------------------------------------------- dataset

def test_generation_is_deterministic_and_valid(tmp_path):
    cfg = cfg_of(test_region={"etas": [2], "n": 3}, constraint={"classes": ["IF"], "epsilons": [2]})
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    assert a == b and len(a) == 2 * 4 * 2
    path = tmp_path / "d.jsonl"
    save_dataset(path, cfg, a)
    cfg2, back = load_dataset(path)
    assert back == a and cfg2.to_dict() == cfg.to_dict()
    ei = [r for r in a if r["task"] == "EI"]
    assert all(len(r["extra_inputs"]) == 3 for r in ei)
    assert all(set(r["fact_classes"]) == {"IF"} for r in a)


def test_perturbed_records(tmp_path):
    cfg = cfg_of(perturb=[True], scenarios=["LT"])
    recs = generate_dataset(cfg)
    assert all(r["perturbed_index"] is not None and r["tags"]["perturbed"] for r in recs)
    save_dataset(tmp_path / "p.jsonl", cfg, recs)
    load_dataset(tmp_path / "p.jsonl")


def tamper(path, line_no, fn):
    lines = path.read_text().splitlines()
    rec = json.loads(lines[line_no - 1])
    fn(rec)
    lines[line_no - 1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")


@pytest.mark.parametrize("fn", [
    lambda r: r["facts"][0][1].__setitem__(0, r["facts"][0][1][0] + 1),
    lambda r: r.__setitem__("expected", [0, 0, 0]) if r["task"] == "EI" else r.__setitem__("expected", "x"),
    lambda r: r.__setitem__("x_t", r["facts"][0][0]),
    lambda r: r.__setitem__("rule_id", "0" * 12),
    lambda r: r.pop("lineage"),
])
def test_tampered_record_fails_with_line(tmp_path, fn):
    cfg = cfg_of(scenarios=["LT"])
    path = tmp_path / "d.jsonl"
    save_dataset(path, cfg, generate_dataset(cfg))
    tamper(path, 3, fn)
    with pytest.raises(SchemaError) as err:
        load_dataset(path)
    assert err.value.line == 3


SAMPLE = generate_dataset(ExperimentConfig.from_dict({"samples": 1, "scenarios": ["LT"],
                                                      "test_region": {"etas": [1], "n": 2}}))[1]
JUNK = st.one_of(st.none(), st.booleans(), st.integers(-3, 12), st.text(max_size=3),
                 st.lists(st.integers(-1, 10), max_size=3), st.just({}), st.just([[1], [2]]), st.just(1.5))


@given(st.sampled_from(sorted(SAMPLE)), JUNK, st.integers(0, 3))
def test_fast_shape_check_matches_schema(field, junk, depth):
    rec = json.loads(json.dumps(SAMPLE))
    target, key = rec, field
    # sometimes mutate deeper inside the field instead of replacing it
    for _ in range(depth):
        inner = target[key]
        if isinstance(inner, list) and inner:
            target, key = inner, 0
        elif isinstance(inner, dict) and inner:
            target, key = inner, sorted(inner)[0]
    target[key] = junk
    assert shape_ok(rec) == jsonschema.Draft7Validator(RECORD_SCHEMA).is_valid(rec)


def test_fast_shape_check_on_missing_fields():
    assert shape_ok(SAMPLE)
    for field in RECORD_SCHEMA["required"]:
        rec = dict(SAMPLE)
        del rec[field]
        assert not shape_ok(rec)


def test_bad_json_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"_meta": {"kind": "dataset"}}\n{not json\n')
    with pytest.raises(SchemaError) as err:
        read_jsonl(path)
    assert err.value.line == 2


def test_large_dataset_loads_quickly(tmp_path):
    cfg = ExperimentConfig.from_dict({"samples": 2500, "dims": [5], "scenarios": ["LT", "CG"]})
    recs = generate_dataset(cfg)
    assert len(recs) == 10_000
    path = tmp_path / "big.jsonl"
    save_dataset(path, cfg, recs)
    start = time.perf_counter()
    _, back = load_dataset(path)
    elapsed = time.perf_counter() - start
    assert len(back) == 10_000 and elapsed < 2.0, elapsed


# ---------------------------------------------------------------- mock clients

def test_mock_clients(worked_facts):
    from mirage.render import EI, render_question
    q = render_question(worked_facts, EI, "LT", (3, 4, 7))
    oracle = OracleClient([q])
    assert oracle.complete(q.prompt) == ["Answer: [11, 11, 7]"]
    assert oracle.complete("unrelated") == [UNKNOWN_REPLY]
    assert len(oracle.complete(q.prompt, {"n": 5})) == 5
    rnd = RandomClient(1)
    assert rnd.complete(q.prompt) == RandomClient(1).complete(q.prompt)
    assert rnd.complete(q.prompt)[0].startswith("Answer: [")
    assert NeverCorrectClient().complete(q.prompt) == [UNKNOWN_REPLY]
    scripted = ScriptedClient(["a", "b"])
    assert scripted.complete("p", {"n": 3}) == ["a", "b", "a"] and scripted.prompts == ["p"]
    assert reply_format(q.prompt) == "Answer: [<<expression>>, <<expression>>, <<expression>>]"
    assert question_key(q.prompt)[-1] == "Question: Input: [3, 4, 7]"
    with pytest.raises(ValueError):
        oracle.complete(q.prompt, {"n": 0})


# ---------------------------------------------------------------- remote client

def chat_reply(texts):
    return httpx.Response(200, json={"choices": [{"message": {"content": t}} for t in texts]})


def remote(handler, monkeypatch, **kw):
    monkeypatch.setenv("TEST_KEY", "secret")
    sleeps = []
    client = RemoteChatClient("m1", "https://example.invalid/v1", "TEST_KEY", transport=httpx.MockTransport(handler),
                              sleep=sleeps.append, **kw)
    return client, sleeps


def test_remote_wire_format(monkeypatch):
    seen = []

    def handler(request):
        seen.append(request)
        body = json.loads(request.content)
        return chat_reply([f"s{i}" for i in range(body["n"])])

    client, _ = remote(handler, monkeypatch)
    assert client.complete("hello", {"n": 5, "temperature": 0.7}) == ["s0", "s1", "s2", "s3", "s4"]
    body = json.loads(seen[0].content)
    assert seen[0].url == "https://example.invalid/v1/chat/completions"
    assert seen[0].headers["authorization"] == "Bearer secret"
    assert body == {"model": "m1", "messages": [{"role": "user", "content": "hello"}],
                    "temperature": 0.7, "max_tokens": 1024, "n": 5}


def test_remote_retries_rate_limits(monkeypatch):
    statuses = iter([429, 503, 200])

    def handler(request):
        code = next(statuses)
        return chat_reply(["ok"]) if code == 200 else httpx.Response(code)

    client, sleeps = remote(handler, monkeypatch, max_retries=3, backoff=0.5)
    assert client.complete("x") == ["ok"]
    assert sleeps == [0.5, 1.0]


def test_remote_gives_up(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429)

    client, sleeps = remote(handler, monkeypatch, max_retries=4, backoff=1.0)
    with pytest.raises(TransportError):
        client.complete("x")
    assert len(calls) == 4 and sleeps == [1.0, 2.0, 4.0]


def test_remote_network_errors_are_retried(monkeypatch):
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) == 1:
            raise httpx.ConnectError("refused")
        return chat_reply(["fine"])

    client, _ = remote(handler, monkeypatch)
    assert client.complete("x") == ["fine"]


def test_remote_hard_failures(monkeypatch):
    client, sleeps = remote(lambda r: httpx.Response(401, text="bad key"), monkeypatch)
    with pytest.raises(TransportError):
        client.complete("x")
    assert sleeps == []
    client, _ = remote(lambda r: httpx.Response(200, json={"nope": 1}), monkeypatch)
    with pytest.raises(TransportError):
        client.complete("x")
    monkeypatch.delenv("TEST_KEY")
    with pytest.raises(ConfigError):
        client.complete("x")


def test_remote_concurrency_is_bounded(monkeypatch):
    import threading
    active, peak, lock = [0], [0], threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.01)
        with lock:
            active[0] -= 1
        return chat_reply(["ok"])

    client, _ = remote(handler, monkeypatch, concurrency=2)
    out = client.complete_many([f"p{i}" for i in range(8)])
    assert len(out) == 8 and peak[0] <= 2


# ---------------------------------------------------------------- cache

class Counting:
    model_id = "count"

    def __init__(self):
        self.calls = 0

    def complete(self, prompt, params=None):
        self.calls += 1
        return [f"reply to {prompt}"] * (params or {}).get("n", 1)


def test_cache_hit_bypasses_inner(tmp_path):
    inner = Counting()
    cached = CachedClient(inner, tmp_path / "cache")
    assert cached.complete("p", {"n": 2}) == ["reply to p"] * 2
    assert cached.complete("p", {"n": 2}) == ["reply to p"] * 2
    assert inner.calls == 1 and (cached.hits, cached.misses) == (1, 1)
    cached.complete("p", {"n": 2, "temperature": 0.5})
    assert inner.calls == 2


def test_cache_hit_needs_no_network(tmp_path, monkeypatch):
    def handler(request):
        raise AssertionError("network used")

    client, _ = remote(handler, monkeypatch)
    cached = CachedClient(client, tmp_path)
    key = cached.key("x", None)
    os.makedirs(tmp_path / key[:2])
    (tmp_path / key[:2] / f"{key}.json").write_text(json.dumps({"responses": ["from cache"]}))
    assert cached.complete("x") == ["from cache"]


def test_cache_corruption(tmp_path):
    cached = CachedClient(Counting(), tmp_path)
    cached.complete("p")
    key = cached.key("p", None)
    (tmp_path / key[:2] / f"{key}.json").write_text("{truncated")
    with pytest.raises(CacheCorruption):
        cached.complete("p")


def test_build_client(tmp_path):
    model = ExperimentConfig.from_dict({}).model
    assert isinstance(build_client(model), OracleClient)
    assert isinstance(build_client(model, "never"), NeverCorrectClient)
    assert isinstance(build_client({**model, "cache_dir": str(tmp_path)}, "random"), CachedClient)
    with pytest.raises(ConfigError):
        build_client(model, "psychic")


# ---------------------------------------------------------------- experiments

@pytest.mark.parametrize("method", ["IO", "ID", "CoT", "SC", "SR", "HR"])
def test_oracle_scores_perfectly_under_every_method(method):
    scenarios = ["LT", "RP:diet", "CG"] + ([] if method in ("SR", "HR") else ["ST"])
    cfg = cfg_of(method={"name": method, "shots": 1}, scenarios=scenarios)
    results = run_experiment(cfg, OracleClient())
    assert accuracy(results) == 1.0
    assert {r.get("method") for r in results} == {method}


def test_random_and_never_clients():
    cfg = cfg_of(tasks=["EI"])
    assert accuracy(run_experiment(cfg, NeverCorrectClient())) == 0.0
    assert accuracy(run_experiment(cfg, RandomClient(0))) <= 0.25


def test_results_file_and_rescore(tmp_path):
    cfg = cfg_of(test_region={"etas": [1], "n": 2})
    path = tmp_path / "r.jsonl"
    results = run_experiment(cfg, OracleClient(), results_path=path)
    meta, rows, stored = load_results(path)
    assert meta["config"] == cfg.to_dict() and meta["seed"] == 3
    assert stored == results
    again = rescore(rows, cfg, meta["model"])
    assert report(again, ("scenario", "task")) == report(stored, ("scenario", "task"))
    assert all(r["density"] == 1.0 for r in report(stored, ("task",)) if r["task"] == "EI")


def test_resume_skips_finished_records(tmp_path):
    cfg = cfg_of(scenarios=["LT"])
    path = tmp_path / "r.jsonl"
    full = run_experiment(cfg, OracleClient(), results_path=path)
    lines = path.read_text().splitlines(keepends=True)
    # keep the header, two finished rows and half of a third (a crash mid-write)
    path.write_text("".join(lines[:3]) + lines[3][:20])
    client = ScriptedClient(["Answer: [0, 0, 0]"], model_id=OracleClient.model_id)
    resumed = run_experiment(cfg, client, results_path=path)
    assert len(client.prompts) == len(full) - 2
    assert resumed[:2] == full[:2]
    assert len(path.read_text().splitlines()) == len(full) + 1


def test_resume_rejects_other_config(tmp_path):
    path = tmp_path / "r.jsonl"
    run_experiment(cfg_of(scenarios=["LT"]), OracleClient(), results_path=path)
    with pytest.raises(ConfigError):
        run_experiment(cfg_of(scenarios=["LT"], seed=4), OracleClient(), results_path=path)


def test_cached_rerun_is_byte_identical(tmp_path):
    cfg = cfg_of(scenarios=["LT", "CG"])
    cache = tmp_path / "cache"
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    run_experiment(cfg, CachedClient(RandomClient(2), cache), results_path=first)
    inner = RandomClient(2)
    inner.complete = lambda *a, **k: pytest.fail("cache miss on rerun")
    run_experiment(cfg, CachedClient(inner, cache), results_path=second)
    assert first.read_bytes() == second.read_bytes()


def test_transport_failures_are_recorded(tmp_path, monkeypatch):
    client, _ = remote(lambda r: httpx.Response(503), monkeypatch, max_retries=2)
    cfg = cfg_of(scenarios=["LT"], tasks=["EI"], samples=1)
    results = run_experiment(cfg, client, results_path=tmp_path / "r.jsonl")
    assert len(results) == 1
    assert results[0].judgment.verdict == "unparseable"
    assert results[0].judgment.reason.startswith("TransportError")


def test_transport_failure_inside_refinement(monkeypatch):
    client, _ = remote(lambda r: httpx.Response(503), monkeypatch, max_retries=1)
    cfg = cfg_of(scenarios=["LT"], tasks=["RI"], samples=1, method={"name": "HR"})
    results = run_experiment(cfg, client)
    assert results[0].judgment.reason.startswith("TransportError")


def test_question_for_extra_points_differ():
    cfg = cfg_of(scenarios=["LT"], tasks=["EI"], test_region={"etas": [2], "n": 2})
    rec = generate_dataset(cfg)[0]
    base = question_for(rec, cfg)
    extra = question_for(rec, cfg, rec["extra_inputs"][0])
    assert base.test_input != extra.test_input
    assert extra.expected == tuple(rec["extra_expected"][0])


def test_probes():
    results = run_probes(OracleClient(), 10, seed=1)
    assert len(results) == 20 and accuracy(results) == 1.0
    assert accuracy(run_probes(NeverCorrectClient(), 5)) == 0.0


def test_thresholds_with_clients_and_solvers():
    cfg = cfg_of(samples=5)
    oracle_rows = run_thresholds(cfg, ClientSolver(OracleClient()), 3)
    assert all(r["ict"] == 1 and r["dct"] == 1 for r in oracle_rows)
    never_rows = run_thresholds(cfg, ClientSolver(NeverCorrectClient()), 3)
    assert all(r["ict"] is None and r["dct"] is None for r in never_rows)
    enum_rows = run_thresholds(cfg, EnumerativeSolver(), 5)
    assert all(r["dct"] <= r["ict"] for r in enum_rows if r["ict"] and r["dct"])
    with pytest.raises(ConfigError):
        ClientSolver(OracleClient(), "ST")
