"""Command-line pipeline driver.

One config file drives everything; flags only override config keys.
Subcommands: understand, vocab, instruct, decode, eval.
Exit codes: 0 success, 1 validation, 2 runtime, 3 budget exceeded.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import click

from . import constrained_decoder, eval_bench, graph_vocab, instruction_forge
from .errors import BudgetExceeded, MissingArtifact, TextGnnError
from .instruction_forge import CorpusSpec, TaskKind
from .llm_gateway import (
    CompletionGateway,
    GatewayConfig,
    MockBackend,
    RemoteBackend,
)
from .prompt_gnn import GnnConfig, run_gnn, write_trace
from .tag_core import load_graph
from .tokenizing import DEFAULT_TOKENIZER


@dataclass
class GraphSpec:
    graph_id: str
    domain_tag: str
    node_file: Path
    edge_file: Path
    label_file: Optional[Path] = None


@dataclass
class PipelineConfig:
    out_dir: Path
    seed: int
    backend: str
    graphs: List[GraphSpec]
    gnn: GnnConfig
    vocab_max_tokens: int = 10
    corpus_count: int = 40
    corpus_tasks: Tuple[TaskKind, ...] = (TaskKind.NodeClassification,)
    transfer_mode: str = "cotraining"
    transfer_target: Optional[str] = None
    beam_width: int = 3
    max_in_flight: int = 8
    context_window: int = 128_000
    token_budget: Optional[int] = None
    model_id: str = "mock"


def _load_config_file(path: Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def load_config(
    path: Path,
    seed: Optional[int] = None,
    backend: Optional[str] = None,
    max_in_flight: Optional[int] = None,
    out_dir: Optional[Path] = None,
) -> PipelineConfig:
    raw = _load_config_file(Path(path))
    base = Path(path).parent

    graphs = []
    for spec in raw.get("graphs", []):
        node_file = (base / spec["node_file"]).resolve()
        edge_file = (base / spec["edge_file"]).resolve()
        label_file = (
            (base / spec["label_file"]).resolve() if spec.get("label_file") else None
        )
        for f in (node_file, edge_file) + ((label_file,) if label_file else ()):
            if not f.exists():
                raise MissingArtifact(f"graph file not found: {f}")
        graphs.append(
            GraphSpec(
                graph_id=spec["graph_id"],
                domain_tag=spec.get("domain_tag", "toy"),
                node_file=node_file,
                edge_file=edge_file,
                label_file=label_file,
            )
        )
    if not graphs:
        raise MissingArtifact("config lists no graphs")

    gnn_raw = dict(raw.get("gnn", {}))
    if "layer_budget_tokens" in gnn_raw:
        gnn_raw["layer_budget_tokens"] = tuple(gnn_raw["layer_budget_tokens"])
    effective_seed = seed if seed is not None else raw.get("seed", 0)
    gnn_raw.setdefault("seed", effective_seed)
    gnn = GnnConfig(**gnn_raw)

    corpus_raw = raw.get("corpus", {})
    tasks = tuple(
        TaskKind(name) for name in corpus_raw.get("tasks", ["node_classification"])
    )
    transfer_raw = raw.get("transfer", {})

    return PipelineConfig(
        out_dir=Path(out_dir or base / raw.get("out_dir", "out")).resolve(),
        seed=effective_seed,
        backend=backend or raw.get("backend", "mock"),
        graphs=graphs,
        gnn=gnn,
        vocab_max_tokens=raw.get("vocab", {}).get(
            "max_tokens", gnn.final_id_max_tokens
        ),
        corpus_count=corpus_raw.get("count", 40),
        corpus_tasks=tasks,
        transfer_mode=transfer_raw.get("mode", "cotraining"),
        transfer_target=transfer_raw.get("target_graph"),
        beam_width=raw.get("decode", {}).get("beam_width", 3),
        max_in_flight=max_in_flight or raw.get("max_in_flight", 8),
        context_window=raw.get("context_window", 128_000),
        token_budget=raw.get("token_budget"),
        model_id=raw.get("model_id", "mock"),
    )


def make_gateway(config: PipelineConfig) -> CompletionGateway:
    if config.backend == "mock":
        backend = MockBackend()
    elif config.backend == "remote":
        backend = RemoteBackend(model_id=config.model_id)
    else:
        raise TextGnnError(f"unknown backend {config.backend!r}")
    gw_config = GatewayConfig(
        cache_dir=config.out_dir / "cache",
        context_window=config.context_window,
        token_budget=config.token_budget,
        max_in_flight=config.max_in_flight,
    )
    return CompletionGateway(backend, gw_config)


def _load_graphs(config: PipelineConfig):
    return [
        load_graph(
            spec.node_file,
            spec.edge_file,
            spec.label_file,
            spec.domain_tag,
            graph_id=spec.graph_id,
        )
        for spec in config.graphs
    ]


def _final_path(config: PipelineConfig, graph_id: str) -> Path:
    return config.out_dir / "final" / f"{graph_id}.json"


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    tmp.replace(path)


# --- commands ---

def cmd_understand(config: PipelineConfig) -> Dict[str, Dict[str, int]]:
    gateway = make_gateway(config)
    started = time.perf_counter()
    for graph in _load_graphs(config):
        trace = run_gnn(graph, config.gnn, completer=gateway)
        trace_path = config.out_dir / "traces" / f"{graph.graph_id}.jsonl"
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        write_trace(trace, trace_path)
        _write_json(_final_path(config, graph.graph_id), trace.final_reprs)
    snapshot = gateway.export_ledger()
    _write_json(config.out_dir / "ledgers" / "understand.json", snapshot)
    totals = gateway.ledger.totals()
    elapsed = time.perf_counter() - started
    click.echo(
        f"understand: {totals.calls} calls, {totals.cache_hits} cache hits, "
        f"{totals.calls - totals.cache_hits} new backend calls, "
        f"{elapsed:.2f}s"
    )
    return snapshot


def cmd_vocab(config: PipelineConfig) -> Path:
    vocabs = []
    for spec in config.graphs:
        final_path = _final_path(config, spec.graph_id)
        if not final_path.exists():
            raise MissingArtifact(
                f"{final_path} missing; run the understand subcommand first"
            )
        reprs = json.loads(final_path.read_text(encoding="utf-8"))
        vocabs.append(
            graph_vocab.build_vocabulary(
                reprs,
                DEFAULT_TOKENIZER,
                max_tokens=config.vocab_max_tokens,
                graph_id=spec.graph_id,
            )
        )
    merged = graph_vocab.merge(vocabs) if len(vocabs) > 1 else vocabs[0]
    vocab_path = config.out_dir / "vocab.json"
    vocab_path.parent.mkdir(parents=True, exist_ok=True)
    graph_vocab.serialize(merged, vocab_path)
    graphs = _load_graphs(config)
    click.echo(
        f"vocab: {len(merged)} entries, "
        f"coverage {graph_vocab.coverage(merged, graphs):.2%}, "
        f"entropy {graph_vocab.entropy(merged):.4f} bits -> {vocab_path}"
    )
    return vocab_path


def _training_graph_ids(config: PipelineConfig) -> Set[str]:
    all_ids = [spec.graph_id for spec in config.graphs]
    if config.transfer_mode == "pretraining":
        if config.transfer_target is None:
            raise TextGnnError("pretraining transfer needs transfer.target_graph")
        return {g for g in all_ids if g != config.transfer_target}
    return set(all_ids)


def cmd_instruct(config: PipelineConfig) -> Path:
    vocab_path = config.out_dir / "vocab.json"
    if not vocab_path.exists():
        raise MissingArtifact(
            f"{vocab_path} missing; run the vocab subcommand first"
        )
    vocab = graph_vocab.deserialize(vocab_path)
    training_ids = _training_graph_ids(config)
    graphs = [g for g in _load_graphs(config) if g.graph_id in training_ids]
    specs = [
        CorpusSpec(graph=g, tasks=config.corpus_tasks, count=config.corpus_count)
        for g in graphs
    ]
    corpus_path = config.out_dir / "corpus.jsonl"
    summary = instruction_forge.assemble_corpus(
        specs, vocab, config.seed, corpus_path
    )
    counts = ", ".join(f"{k}={v}" for k, v in sorted(summary.per_task.items()))
    click.echo(
        f"instruct: {summary.written} records ({counts}), "
        f"{summary.skipped} skipped -> {corpus_path}"
    )
    return corpus_path


class _LexicalOverlapScorer:
    """Deterministic offline scorer: reward tokens present in the instruction."""

    def __init__(self, instruction: str) -> None:
        self.tokens = set(DEFAULT_TOKENIZER.tokenize(instruction))

    def score(self, prefix, allowed):
        return {t: (1.0 if t in self.tokens else 0.0) for t in allowed}


def cmd_decode(config: PipelineConfig) -> Path:
    vocab_path = config.out_dir / "vocab.json"
    corpus_path = config.out_dir / "corpus.jsonl"
    for path, hint in ((vocab_path, "vocab"), (corpus_path, "instruct")):
        if not path.exists():
            raise MissingArtifact(
                f"{path} missing; run the {hint} subcommand first"
            )
    vocab = graph_vocab.deserialize(vocab_path)
    tree = constrained_decoder.build_tree(vocab)
    trie_path = config.out_dir / "trie.bin"
    constrained_decoder.write_tree(tree, trie_path)

    predictions = []
    with corpus_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            if record["task"] != TaskKind.GenerativeLP.value:
                continue
            scorer = _LexicalOverlapScorer(record["instruction"])
            ranked = constrained_decoder.decode_beam(
                tree, scorer, config.beam_width
            )
            predictions.append(
                {
                    "instruction": record["instruction"],
                    "target": record["output"],
                    "task": record["task"],
                    "predicted": " ".join(ranked[0].token_path),
                    "ranking": [" ".join(r.token_path) for r in ranked],
                }
            )
    pred_path = config.out_dir / "predictions.jsonl"
    tmp = pred_path.with_name(pred_path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in predictions:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    tmp.replace(pred_path)
    click.echo(
        f"decode: {len(predictions)} generative predictions "
        f"(beam {config.beam_width}) -> {pred_path}; trie -> {trie_path}"
    )
    return pred_path


def cmd_eval(config: PipelineConfig) -> Path:
    pred_path = config.out_dir / "predictions.jsonl"
    if not pred_path.exists():
        raise MissingArtifact(
            f"{pred_path} missing; run the decode subcommand first"
        )
    records = []
    with pred_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    summary: Dict[str, object] = {"records": len(records)}
    if records:
        preds = [
            eval_bench.PredictionRecord(r["predicted"], r["target"]) for r in records
        ]
        summary["accuracy"] = eval_bench.accuracy(preds)
        summary["hr_at_1"] = eval_bench.hr_at_1(
            [(r["ranking"], r["target"]) for r in records]
        )

    ledger_path = config.out_dir / "ledgers" / "understand.json"
    if ledger_path.exists():
        snapshot = json.loads(ledger_path.read_text(encoding="utf-8"))
        rows = eval_bench.efficiency_report([("understand", snapshot)])
        summary["efficiency"] = [row.__dict__ for row in rows]
        click.echo(eval_bench.format_efficiency_rows(rows))

    report_dir = config.out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    import hashlib

    digest = hashlib.sha256(
        json.dumps(summary, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]
    report_path = report_dir / f"eval-{digest}.json"
    _write_json(report_path, summary)
    shown = {k: v for k, v in summary.items() if k != "efficiency"}
    click.echo(f"eval: {json.dumps(shown, sort_keys=True)} -> {report_path}")
    return report_path


# --- click wiring ---

_COMMANDS = {
    "understand": cmd_understand,
    "vocab": cmd_vocab,
    "instruct": cmd_instruct,
    "decode": cmd_decode,
    "eval": cmd_eval,
}


def _run(name: str, **overrides) -> None:
    try:
        config = load_config(**overrides)
    except (TextGnnError, OSError, KeyError, ValueError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(1)
    try:
        _COMMANDS[name](config)
    except BudgetExceeded as exc:
        click.echo(f"budget exceeded: {exc}", err=True)
        sys.exit(3)
    except MissingArtifact as exc:
        click.echo(f"missing artifact: {exc}", err=True)
        sys.exit(1)
    except TextGnnError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(2)


def _common_options(fn):
    fn = click.option("--out", "out_dir", type=click.Path(path_type=Path))(fn)
    fn = click.option("--max-in-flight", type=int, default=None)(fn)
    fn = click.option(
        "--backend", type=click.Choice(["remote", "mock"]), default=None
    )(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option(
        "--config", "path", required=True, type=click.Path(exists=True, path_type=Path)
    )(fn)
    return fn


@click.group()
def main() -> None:
    """Text-space graph pipeline: understand, vocab, instruct, decode, eval."""


for _name in _COMMANDS:

    def _make(name: str):
        @_common_options
        def command(path, seed, backend, max_in_flight, out_dir):
            _run(
                name,
                path=path,
                seed=seed,
                backend=backend,
                max_in_flight=max_in_flight,
                out_dir=out_dir,
            )

        command.__name__ = name
        return command

    main.command(name=_name)(_make(_name))


if __name__ == "__main__":
    main()
