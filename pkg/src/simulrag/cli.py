"""Command-line entry point.

Five subcommands cover the workflows the package supports:

* ``ask``       run the pipeline on one question
* ``bench``     generate benchmark datasets (``gen``) or summarize them
                (``stats``)
* ``eval``      run the selection-strategy comparison grid on a dataset
* ``graph``     dump the claim/entailment graph and confidence scores for
                one question without selection or verification
* ``simulate``  execute a simulator directly from a parameter file

Every run writes a manifest next to its output (``<out>.manifest.json``)
recording the config digest, seeds, and asset versions, so an output file
can always be traced back to what produced it. Without ``--out`` the
result and manifest are printed to stdout as one JSON envelope.

Reproducibility: ``--fixtures`` forces the scripted backend (no network);
setting SOURCE_DATE_EPOCH pins manifest timestamps, making repeated runs
byte-identical. SIMULRAG_API_KEY is the only other ambient input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import evaluation
from . import pipeline as pl
from .benchgen import dataset_stats, generate_dataset, read_dataset, write_dataset
from .claims import (
    build_entailment_graph,
    decompose,
    merge_all,
    sample_answers,
    score_confidence,
)
from .domain import ParamSettings, PipelineConfig, Question, canonical_json_bytes
from .errors import SchemaViolation, SimulragError
from .gateway import HttpBackend, LlmGateway, ScriptedBackend, template_versions
from .simulators import get_simulator, handbook_versions

log = logging.getLogger(__name__)

_CONFIG_FIELDS = {f.name for f in fields(PipelineConfig)}
_EXTRA_CONFIG_KEYS = {"base_url"}


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = float(epoch) if epoch is not None else time.time()
    return datetime.fromtimestamp(moment, tz=timezone.utc).isoformat()


def load_config(path: str | None, seed: int | None) -> tuple[PipelineConfig, dict]:
    raw: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise SchemaViolation(f"config {path} must hold a JSON object")
    unknown = set(raw) - _CONFIG_FIELDS - _EXTRA_CONFIG_KEYS
    if unknown:
        raise SchemaViolation(f"unknown config keys: {sorted(unknown)}")
    extras = {k: raw[k] for k in _EXTRA_CONFIG_KEYS if k in raw}
    config = PipelineConfig(**{k: v for k, v in raw.items() if k in _CONFIG_FIELDS})
    if seed is not None:
        config = replace(
            config, seed_answers=seed, seed_simulator=seed, seed_selector=seed
        )
    return config, extras


def make_gateway(config: PipelineConfig, extras: dict, fixtures: str | None) -> LlmGateway:
    if fixtures is not None:
        backend = ScriptedBackend.from_jsonl(fixtures)
    elif config.backend == "http":
        base_url = extras.get("base_url")
        if not base_url:
            raise SchemaViolation("http backend needs base_url in the config file")
        backend = HttpBackend(
            base_url=base_url,
            model=config.model,
            api_key=os.environ.get("SIMULRAG_API_KEY"),
        )
    else:
        raise SchemaViolation("scripted backend needs --fixtures FILE")
    return LlmGateway(backend, in_flight_limit=config.concurrency_limit)


def build_manifest(config: PipelineConfig, seeds: dict, started: str) -> dict:
    digest = hashlib.sha256(canonical_json_bytes(config.to_dict())).hexdigest()
    return {
        "config_digest": digest,
        "seeds": seeds,
        "backend": config.backend,
        "template_versions": template_versions(),
        "handbook_versions": handbook_versions(),
        "started_at": started,
        "finished_at": _timestamp(),
    }


def _dump(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _emit(result: dict, manifest: dict, out: str | None) -> None:
    if out is None:
        sys.stdout.write(_dump({"manifest": manifest, "result": result}))
        return
    path = Path(out)
    path.write_text(_dump(result), encoding="utf-8")
    Path(str(path) + ".manifest.json").write_text(_dump(manifest), encoding="utf-8")
    log.info("wrote %s", path)


def _pipeline_seeds(config: PipelineConfig) -> dict:
    return {
        "answers": config.seed_answers,
        "simulator": config.seed_simulator,
        "selector": config.seed_selector,
    }


def _question_from_args(args) -> Question:
    qid = f"cli/{hashlib.sha256(args.question.encode('utf-8')).hexdigest()[:12]}"
    return Question(id=qid, text=args.question, domain=args.domain)


def cmd_ask(args) -> int:
    started = _timestamp()
    config, extras = load_config(args.config, args.seed)
    gateway = make_gateway(config, extras, args.fixtures)
    result = pl.run(_question_from_args(args), config, gateway)
    _emit(result.to_dict(), build_manifest(config, _pipeline_seeds(config), started), args.out)
    return 0


def cmd_graph(args) -> int:
    started = _timestamp()
    config, extras = load_config(args.config, args.seed)
    gateway = make_gateway(config, extras, args.fixtures)
    question = _question_from_args(args)
    answers = sample_answers(gateway, question, config.m)
    merged, merge_map = merge_all(gateway, [decompose(gateway, a) for a in answers])
    graph = build_entailment_graph(gateway, answers, merged)
    scores = score_confidence(graph, config.centrality_metric, config.closeness_variant)
    result = {
        "question": question.to_dict(),
        "answers": [a.to_dict() for a in answers],
        "claims": [c.to_dict() for c in merged],
        "merge": merge_map.to_dict(),
        "graph": graph.to_dict(),
        "scores": {cid: scores[cid] for cid in sorted(scores)},
    }
    _emit(result, build_manifest(config, _pipeline_seeds(config), started), args.out)
    return 0


def cmd_bench(args) -> int:
    started = _timestamp()
    config, extras = load_config(args.config, None)
    if args.bench_command == "stats":
        items = []
        for path in args.dataset:
            items.extend(read_dataset(path))
        stats = dataset_stats(items)
        _print_stats_table(stats)
        if args.out:
            _emit(stats, build_manifest(config, {}, started), args.out)
        return 0

    if args.out is None:
        print("usage: simulrag bench gen --domain D -n N --out FILE", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else 0
    gateway = make_gateway(config, extras, args.fixtures)
    ranges = None
    if args.ranges:
        with open(args.ranges, encoding="utf-8") as fh:
            ranges = json.load(fh)
    items = generate_dataset(
        gateway,
        args.domain,
        args.n,
        seed=seed,
        ranges=ranges,
        ensemble_size=config.ensemble_size,
    )
    write_dataset(items, args.out)
    manifest = build_manifest(config, {"sampler": seed}, started)
    Path(args.out + ".manifest.json").write_text(_dump(manifest), encoding="utf-8")
    log.info("wrote %d items to %s", len(items), args.out)
    return 0


_STATS_COLUMNS = (
    ("n_questions", "questions"),
    ("avg_answer_words", "avg words"),
    ("avg_claims", "avg claims"),
    ("avg_quantitative_claims", "quant"),
    ("avg_qualitative_claims", "qual"),
    ("avg_tool_param_count", "tool params"),
)


def _print_stats_table(stats: dict) -> None:
    header = "benchmark".ljust(16) + "".join(h.rjust(12) for _, h in _STATS_COLUMNS)
    print(header)
    for domain in sorted(stats):
        row = stats[domain]
        cells = "".join(f"{row[key]:>12g}" for key, _ in _STATS_COLUMNS)
        print(domain.ljust(16) + cells)


def cmd_eval(args) -> int:
    started = _timestamp()
    config, extras = load_config(args.config, args.seed)
    gateway = make_gateway(config, extras, args.fixtures)
    dataset = read_dataset(args.dataset)
    report = evaluation.run_comparison(
        gateway, dataset, config, budgets=args.budgets, strategies=tuple(args.strategies)
    )
    seeds = _pipeline_seeds(config)
    _emit(report, build_manifest(config, seeds, started), args.out)
    return 0


def cmd_simulate(args) -> int:
    started = _timestamp()
    config, _ = load_config(args.config, None)
    with open(args.params, encoding="utf-8") as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise SchemaViolation(f"params file {args.params} must hold a JSON object")
    settings = ParamSettings(
        simulator_id=args.domain, values=values, provenance="manual"
    )
    seed = args.seed if args.seed is not None else config.seed_simulator
    output = get_simulator(args.domain).run(
        settings, seed=seed, ensemble_size=config.ensemble_size
    )
    _emit(output.to_dict(), build_manifest(config, {"simulator": seed}, started), args.out)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="pipeline config JSON")
    parser.add_argument(
        "--fixtures", metavar="PATH", help="scripted-backend fixture pack (JSONL)"
    )
    parser.add_argument("--seed", type=int, metavar="N", help="override every seed")
    parser.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulrag",
        description="simulation-grounded question answering over toy scientific models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", help="answer one question end to end")
    ask.add_argument("-q", "--question", required=True)
    ask.add_argument("--domain", required=True, choices=("climate", "epidemiology"))
    _add_common(ask)
    ask.set_defaults(handler=cmd_ask)

    bench = sub.add_parser("bench", help="benchmark dataset tools")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)
    gen = bench_sub.add_parser("gen", help="generate a grounded QA dataset")
    gen.add_argument("--domain", required=True, choices=("climate", "epidemiology"))
    gen.add_argument("-n", type=int, required=True, help="number of items")
    gen.add_argument("--ranges", metavar="PATH", help="sampling ranges JSON")
    _add_common(gen)
    gen.set_defaults(handler=cmd_bench)
    stats = bench_sub.add_parser("stats", help="summarize datasets")
    stats.add_argument("dataset", nargs="+", help="dataset JSONL paths")
    _add_common(stats)
    stats.set_defaults(handler=cmd_bench)

    ev = sub.add_parser("eval", help="selection-strategy comparison on a dataset")
    ev.add_argument("--dataset", required=True, metavar="PATH")
    ev.add_argument("--budgets", type=float, nargs="+", default=[0.25])
    ev.add_argument(
        "--strategies",
        nargs="+",
        default=["random", "verbalized", "uncertainty", "ue_sba"],
    )
    _add_common(ev)
    ev.set_defaults(handler=cmd_eval)

    graph = sub.add_parser("graph", help="claim graph and confidence scores only")
    graph.add_argument("-q", "--question", required=True)
    graph.add_argument("--domain", required=True, choices=("climate", "epidemiology"))
    _add_common(graph)
    graph.set_defaults(handler=cmd_graph)

    sim = sub.add_parser("simulate", help="run a simulator from a parameter file")
    sim.add_argument("--domain", required=True, choices=("climate", "epidemiology"))
    sim.add_argument("--params", required=True, metavar="PATH", help="parameter JSON")
    _add_common(sim)
    sim.set_defaults(handler=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr
    )
    try:
        return args.handler(args)
    except SimulragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
