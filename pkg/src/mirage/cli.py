"""Command line entry point: ``mirage <command> [options]``.

Exit codes: 0 success, 1 validation or usage error, 2 transport failure.
"""
from __future__ import annotations

import argparse
import sys

from .errors import MirageError, TransportError
from .harness.clients import build_client
from .harness.config import CLIENT_KINDS, ExperimentConfig
from .harness.dataset import generate_dataset, load_dataset, save_dataset, write_jsonl
from .harness.experiment import (ClientSolver, load_results, policy_for, question_for, rescore,
                                 run_experiment, run_probes, run_thresholds)
from .metrics import format_table, report, threshold_rows, write_csv
from .solvers import EnumerativeSolver, NeighborSolver

EXIT_OK, EXIT_INVALID, EXIT_TRANSPORT = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--config", help="experiment config (YAML or JSON)")
    p.add_argument("--out", help="output path (stdout when omitted, where sensible)")


def _grouping(text):
    return tuple(g.strip() for g in text.split(",") if g.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mirage", description="Inductive-reasoning task generator, grader and analyzer.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a dataset JSONL from a config")
    _common(p)

    p = sub.add_parser("render", help="write the prompts of a dataset")
    _common(p)
    p.add_argument("--dataset", help="dataset JSONL (generated from --config when omitted)")

    p = sub.add_parser("eval", help="query a client on a dataset and judge the replies")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--client", choices=CLIENT_KINDS, help="override the config's model kind")
    p.add_argument("--cache", help="response cache directory")
    p.add_argument("--group", type=_grouping, default=("scenario", "task"))

    p = sub.add_parser("score", help="re-judge the stored replies of a results file")
    _common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--group", type=_grouping, default=("scenario", "task"))

    p = sub.add_parser("report", help="grouped metric tables from a results file")
    _common(p)
    p.add_argument("--results", required=True)
    p.add_argument("--group", type=_grouping, default=("scenario", "task"))
    p.add_argument("--drop-unparseable", action="store_true")

    p = sub.add_parser("probe", help="single-step arithmetic questions")
    _common(p)
    p.add_argument("--client", choices=CLIENT_KINDS)
    p.add_argument("--n", type=int, default=50, help="questions per probe kind")

    p = sub.add_parser("thresholds", help="first prefix sizes at which induction and deduction succeed")
    _common(p)
    p.add_argument("--solver", choices=("enumerative", "neighbor", "client"), default="enumerative")
    p.add_argument("--client", choices=CLIENT_KINDS)
    p.add_argument("--scenario", default="LT")
    p.add_argument("--max-n", type=int, default=None)

    p = sub.add_parser("density", help="accuracy around correctly answered test inputs")
    _common(p)
    p.add_argument("--client", choices=CLIENT_KINDS)
    p.add_argument("--group", type=_grouping, default=("fact_class", "epsilon", "eta"))
    return parser


def _config(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.load(args.config, args.seed)
    return ExperimentConfig.from_dict({}, args.seed)


def _client(cfg, args, cache=None):
    model = dict(cfg.model)
    if cache:
        model["cache_dir"] = cache
    return build_client(model, getattr(args, "client", None))


def _emit_table(rows, args, columns=None):
    sys.stdout.write(format_table(rows, columns))
    if args.out:
        write_csv(rows, args.out, columns)


def cmd_gen(args):
    cfg = _config(args)
    records = generate_dataset(cfg)
    if args.out:
        save_dataset(args.out, cfg, records)
    else:
        from .harness.dataset import dataset_meta, dumps
        sys.stdout.write(dumps({"_meta": dataset_meta(cfg)}) + "\n")
        for rec in records:
            sys.stdout.write(dumps(rec) + "\n")
    print(f"{len(records)} records", file=sys.stderr)
    return EXIT_OK


def _records(args):
    if getattr(args, "dataset", None):
        cfg, records = load_dataset(args.dataset)
        if args.seed is not None or args.config:
            print("note: the dataset's embedded config is used", file=sys.stderr)
        return cfg, records
    cfg = _config(args)
    return cfg, generate_dataset(cfg)


def cmd_render(args):
    cfg, records = _records(args)
    rows = []
    for rec in records:
        q = question_for(rec, cfg)
        rows.append({"id": rec["id"], "prompt": q.prompt, "expected_text": q.expected_text})
    if args.out:
        write_jsonl(args.out, {"kind": "prompts", "config": cfg.to_dict(), "seed": cfg.seed}, rows)
    else:
        for row in rows:
            sys.stdout.write(f"### {row['id']}\n{row['prompt']}\n")
    return EXIT_OK


def cmd_eval(args):
    cfg, records = _records(args)
    client = _client(cfg, args, args.cache)
    workers = cfg.model["concurrency"] if (args.client or cfg.model["kind"]) == "remote" else 1
    results = run_experiment(cfg, client, records, args.out, workers=workers)
    sys.stdout.write(format_table(report(results, args.group)))
    failed = sum(r.judgment.reason.startswith("TransportError") for r in results)
    if failed:
        print(f"{failed} queries failed in transport; they are recorded as unparseable", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_score(args):
    meta, rows, original = load_results(args.results)
    if meta is None or meta.get("kind") != "results":
        raise MirageError(f"{args.results} is not a results file")
    cfg = ExperimentConfig.from_dict(meta["config"])
    rescored = rescore(rows, cfg, meta.get("model", ""), policy_for(cfg))
    before, after = report(original, args.group), report(rescored, args.group)
    sys.stdout.write(format_table(after))
    if args.out:
        write_csv(after, args.out)
    same = [(a["accuracy"], a["n"]) for a in after] == [(b["accuracy"], b["n"]) for b in before]
    print("re-judged accuracies match the stored run" if same else "re-judged accuracies DIFFER from the stored run",
          file=sys.stderr)
    return EXIT_OK if same else EXIT_INVALID


def cmd_report(args):
    _, _, results = load_results(args.results)
    _emit_table(report(results, args.group, args.drop_unparseable), args)
    return EXIT_OK


def cmd_probe(args):
    cfg = _config(args)
    client = _client(cfg, args)
    results = run_probes(client, args.n, cfg.seed)
    _emit_table(report(results, ("probe",)), args)
    return EXIT_OK


def cmd_thresholds(args):
    cfg = _config(args)
    max_n = args.max_n or max(cfg.sizes)
    if args.solver == "enumerative":
        solver = EnumerativeSolver()
    elif args.solver == "neighbor":
        solver = NeighborSolver(cfg.metric)
    else:
        solver = ClientSolver(_client(cfg, args), args.scenario, seed=cfg.seed)
    rows = run_thresholds(cfg, solver, max_n)
    both = [r for r in rows if r["ict"] is not None and r["dct"] is not None]
    violations = sum(r["dct"] > r["ict"] for r in both)
    dist = threshold_rows(rows, {"solver": args.solver, "max_n": max_n})
    _emit_table(dist, args)
    print(f"{len(rows)} tasks, {len(both)} with both thresholds, {violations} with DCT > ICT", file=sys.stderr)
    failed = sum(any("TransportError" in e for e in r["errors"]) for r in rows)
    if failed:
        print(f"{failed} tasks hit transport failures; their failed steps count as incorrect", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_density(args):
    cfg = _config(args)
    if cfg.test_region["n"] < 1:
        cfg = cfg.with_overrides(test_region={"n": 5})
    cfg = cfg.with_overrides(tasks=["EI"])
    results = run_experiment(cfg, _client(cfg, args))
    rows = report(results, args.group)
    _emit_table([{k: r[k] for k in (*args.group, "n", "accuracy", "density")} for r in rows], args)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "render": cmd_render, "eval": cmd_eval, "score": cmd_score, "report": cmd_report,
            "probe": cmd_probe, "thresholds": cmd_thresholds, "density": cmd_density}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except TransportError as exc:
        print(f"transport failure: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (MirageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
