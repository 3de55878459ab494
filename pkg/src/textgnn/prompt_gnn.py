"""Message passing replicated in text space.

Node texts are summarized into layer-0 representations, then L rounds of
prompt-driven aggregation-update refine them.  Layer l representations are
computed exclusively from layer l-1 representations (synchronous updates),
with per-layer seeded neighbor sampling and shrinking token budgets.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .errors import BudgetExceeded, LayerFailure, UnknownDomain
from .llm_gateway import CompletionGateway, CompletionRequest

AGG_TEMPLATE = (
    "Given the central node {center}. "
    "The selected one-hop neighbors are [{neighbors}]. "
    "Please aggregate neighbor nodes and update a concise yet meaningful "
    "representation for the central node. "
    "Note connected nodes should share similar semantics and vice versa. "
    "Limit the updated representation to {budget} tokens."
)

CITATION_INIT_TEMPLATE = (
    "The title of the paper is {title}, the abstract of the paper is "
    "{abstract}. Please summarize the paper."
)

ITEM_INIT_TEMPLATE = (
    "The title of the item is {title}, the description of the item is "
    "{abstract}. Please summarize the item."
)


@dataclass(frozen=True)
class PromptTemplateSet:
    init_template: str
    agg_template: str = AGG_TEMPLATE


#: Init prompts vary by dataset domain; the aggregation prompt does not.
TEMPLATE_REGISTRY: Dict[str, PromptTemplateSet] = {
    "computer-science": PromptTemplateSet(CITATION_INIT_TEMPLATE),
    "biomedical": PromptTemplateSet(CITATION_INIT_TEMPLATE),
    "e-commerce": PromptTemplateSet(ITEM_INIT_TEMPLATE),
    "toy": PromptTemplateSet("{text}"),
}


def templates_for(domain_tag: str) -> PromptTemplateSet:
    try:
        return TEMPLATE_REGISTRY[domain_tag]
    except KeyError:
        raise UnknownDomain(domain_tag) from None


@dataclass(frozen=True)
class GnnConfig:
    layers: int = 3
    sample_ratio: float = 0.6
    neighbor_cap: int = 20
    seed: int = 0
    init_budget_tokens: int = 120
    layer_budget_tokens: Tuple[int, ...] = (60, 30, 12)
    final_id_max_tokens: int = 10

    def __post_init__(self) -> None:
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if not 0 < self.sample_ratio <= 1:
            raise ValueError("sample_ratio must lie in (0, 1]")
        if self.neighbor_cap < 1:
            raise ValueError("neighbor_cap must be >= 1")
        if len(self.layer_budget_tokens) < self.layers:
            raise ValueError("budget schedule shorter than layer count")
        for earlier, later in zip(
            self.layer_budget_tokens, self.layer_budget_tokens[1:]
        ):
            if later > earlier:
                raise ValueError("layer budgets must be non-increasing")


@dataclass
class LayerState:
    layer_index: int
    reprs: Dict[str, str]
    provenance: Dict[str, List[str]] = field(default_factory=dict)


@dataclass
class GnnTrace:
    graph_id: str
    states: List[LayerState]

    @property
    def final_reprs(self) -> Dict[str, str]:
        return dict(self.states[-1].reprs)


# Hook used by permuted_run: rewrites (neighbor_ids, neighbor_texts) just
# before prompt assembly.
NeighborTransform = Callable[
    [str, int, List[str], List[str]], Tuple[List[str], List[str]]
]


def _node_rng(seed: int, graph_id: str, node: str, layer: int) -> random.Random:
    material = f"{seed}|{graph_id}|{node}|{layer}".encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sample_neighbors(graph, node: str, config: GnnConfig, layer: int) -> List[str]:
    """Seeded sample of min(cap, max(1, ceil(ratio*deg))) neighbors, ascending."""
    adjacency = sorted(graph.adjacency(node))
    deg = len(adjacency)
    if deg == 0:
        return []
    size = min(config.neighbor_cap, max(1, math.ceil(config.sample_ratio * deg)))
    if size >= deg:
        return adjacency
    rng = _node_rng(config.seed, graph.graph_id, node, layer)
    return sorted(rng.sample(adjacency, size))


def build_agg_prompt(
    center_repr: str,
    neighbor_reprs: Sequence[str],
    budget: int,
    template: str = AGG_TEMPLATE,
) -> str:
    if not center_repr:
        raise ValueError("center representation must be non-empty")
    return template.format(
        center=center_repr,
        neighbors=", ".join(neighbor_reprs),
        budget=budget,
    )


def _init_fields(raw_text: str) -> Dict[str, str]:
    """Derive {text, title, abstract} for init templates from raw text.

    The first line (or first sentence) acts as the title, the remainder as
    the abstract/description.
    """
    if "\n" in raw_text:
        title, _, abstract = raw_text.partition("\n")
    elif ". " in raw_text:
        title, _, abstract = raw_text.partition(". ")
    else:
        title = abstract = raw_text
    return {
        "text": raw_text,
        "title": title.strip(),
        "abstract": abstract.strip(),
    }


def build_init_prompt(raw_text: str, templates: PromptTemplateSet) -> str:
    return templates.init_template.format(**_init_fields(raw_text))


def initialize_features(
    graph,
    templates: PromptTemplateSet,
    completer: CompletionGateway,
    config: GnnConfig,
) -> LayerState:
    """Summarize every node's raw text into a layer-0 representation."""
    tokenizer = completer.tokenizer
    window = completer.config.context_window

    def summarize(node_id: str) -> str:
        raw = graph.get_node(node_id).raw_text
        prompt = build_init_prompt(raw, templates)
        if tokenizer.count(prompt) > window:
            overhead = tokenizer.count(build_init_prompt("x", templates))
            raw = tokenizer.truncate(raw, max(1, window - overhead))
            prompt = build_init_prompt(raw, templates)
        request = CompletionRequest(
            model_id=completer.backend.model_id,
            prompt=prompt,
            max_output_tokens=config.init_budget_tokens,
            temperature=0.0,
            request_tag="understand:init",
        )
        return tokenizer.truncate(completer.complete(request), config.init_budget_tokens)

    reprs = _complete_all(graph.node_ids(), summarize, completer)
    return LayerState(layer_index=0, reprs=reprs, provenance={})


def _complete_all(
    node_ids: Sequence[str],
    fn: Callable[[str], str],
    completer: CompletionGateway,
) -> Dict[str, str]:
    """Run fn per node, concurrently up to the gateway limit; collect failures."""
    results: Dict[str, str] = {}
    failures: Dict[str, Exception] = {}
    max_workers = max(1, completer.config.max_in_flight)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {node_id: pool.submit(fn, node_id) for node_id in node_ids}
        for node_id, future in futures.items():
            try:
                results[node_id] = future.result()
            except Exception as exc:  # noqa: BLE001 - collected per node
                failures[node_id] = exc
    if failures:
        # A spent token budget should stop the whole run, not read as a
        # per-node failure.
        for exc in failures.values():
            if isinstance(exc, BudgetExceeded):
                raise exc
        raise LayerFailure(failures)
    return results


def run_layer(
    graph,
    prev: LayerState,
    config: GnnConfig,
    templates: PromptTemplateSet,
    completer: CompletionGateway,
    neighbor_transform: Optional[NeighborTransform] = None,
) -> LayerState:
    """One synchronous aggregation-update round over the whole graph."""
    layer = prev.layer_index + 1
    budget = config.layer_budget_tokens[layer - 1]
    tokenizer = completer.tokenizer
    sampled_by_node: Dict[str, List[str]] = {}

    def update(node_id: str) -> str:
        sampled = sample_neighbors(graph, node_id, config, layer)
        texts = [prev.reprs[j] for j in sampled]
        if neighbor_transform is not None:
            sampled, texts = neighbor_transform(node_id, layer, sampled, texts)
        sampled_by_node[node_id] = sampled
        prompt = build_agg_prompt(
            prev.reprs[node_id], texts, budget, templates.agg_template
        )
        request = CompletionRequest(
            model_id=completer.backend.model_id,
            prompt=prompt,
            max_output_tokens=budget,
            temperature=0.0,
            request_tag=f"understand:layer{layer}",
        )
        return tokenizer.truncate(completer.complete(request), budget)

    reprs = _complete_all(graph.node_ids(), update, completer)
    return LayerState(layer_index=layer, reprs=reprs, provenance=sampled_by_node)


def run_gnn(
    graph,
    config: GnnConfig,
    templates: Optional[PromptTemplateSet] = None,
    completer: Optional[CompletionGateway] = None,
    neighbor_transform: Optional[NeighborTransform] = None,
) -> GnnTrace:
    """Full understanding pass: init plus `config.layers` rounds."""
    if completer is None:
        raise ValueError("a completion gateway is required")
    tset = templates or templates_for(graph.domain_tag)
    state = initialize_features(graph, tset, completer, config)
    states = [state]
    for _ in range(config.layers):
        state = run_layer(
            graph, state, config, tset, completer, neighbor_transform
        )
        states.append(state)
    return GnnTrace(graph_id=graph.graph_id, states=states)


def permuted_run(
    graph,
    config: GnnConfig,
    mode: str,
    perm_seed: int,
    templates: Optional[PromptTemplateSet] = None,
    completer: Optional[CompletionGateway] = None,
) -> GnnTrace:
    """Run with neighbor-order perturbation.

    ``shuffle_nodes`` permutes each neighbor list before prompt assembly;
    ``shuffle_tokens`` prefixes each neighbor text with a position token
    "<p{k}>" (k = original position) and then permutes the list.
    """
    if mode not in ("shuffle_nodes", "shuffle_tokens"):
        raise ValueError(f"unknown permutation mode {mode!r}")

    def transform(node_id, layer, ids, texts):
        if mode == "shuffle_tokens":
            texts = [f"<p{k}> {text}" for k, text in enumerate(texts, start=1)]
        order = list(range(len(ids)))
        _node_rng(perm_seed, graph.graph_id, node_id, layer).shuffle(order)
        return [ids[i] for i in order], [texts[i] for i in order]

    return run_gnn(graph, config, templates, completer, neighbor_transform=transform)


def write_trace(trace: GnnTrace, path: Path) -> None:
    """One JSON record per (node, layer), ordered by (node_id, layer)."""
    records = []
    node_ids = sorted(trace.states[0].reprs)
    for node_id in node_ids:
        for state in trace.states:
            records.append(
                {
                    "node_id": node_id,
                    "layer": state.layer_index,
                    "text": state.reprs[node_id],
                    "neighbor_ids": state.provenance.get(node_id, []),
                }
            )
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_trace(path: Path) -> GnnTrace:
    states: Dict[int, LayerState] = {}
    graph_id = Path(path).stem
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            layer = record["layer"]
            state = states.setdefault(layer, LayerState(layer, {}, {}))
            state.reprs[record["node_id"]] = record["text"]
            if record["neighbor_ids"]:
                state.provenance[record["node_id"]] = record["neighbor_ids"]
    ordered = [states[layer] for layer in sorted(states)]
    return GnnTrace(graph_id=graph_id, states=ordered)
