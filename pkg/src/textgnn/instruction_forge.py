"""Task-oriented instruction rendering and corpus assembly.

Instructions are fully natural language: every node appears as its
language-based id from the vocabulary, never as an opaque numeric id.
Corpus files are JSON Lines records
``{"instruction", "output", "task", "graph", "center", "variant"}``.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .errors import (
    InsufficientClasses,
    MissingLabel,
    NoHeldOutEdge,
    NoValidConfiguration,
    UnknownDomain,
)
from .graph_vocab import Vocabulary
from .tag_core import TextAttributedGraph, neighbors


class TaskKind(str, Enum):
    NodeClassification = "node_classification"
    DiscriminativeLP = "discriminative_lp"
    GenerativeLP = "generative_lp"
    NodeDiscrimination = "node_discrimination"
    LinkDiscrimination = "link_discrimination"


@dataclass(frozen=True)
class Instruction:
    instruction_text: str
    target: str
    task: TaskKind
    graph_id: str
    center_node: str
    variant_index: int


class PromptPool:
    """Per-task template variants; variant 0 is the canonical wording."""

    def __init__(self, variants: Dict[str, List[str]]) -> None:
        self._variants = variants
        for task in TaskKind:
            if not variants.get(task.value):
                raise ValueError(f"no template variants for task {task.value}")

    @classmethod
    def load_default(cls) -> "PromptPool":
        text = (
            resources.files("textgnn.data").joinpath("prompt_pool.json").read_text()
        )
        return cls(json.loads(text))

    def variants_for(self, task: TaskKind) -> List[str]:
        return self._variants[task.value]

    def pick_variant(self, task: TaskKind, seed_material: str) -> int:
        digest = hashlib.sha256(seed_material.encode("utf-8")).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        return rng.randrange(len(self._variants[task.value]))


DOMAIN_DESCRIPTIONS: Dict[str, str] = {
    "computer-science": "computer science research citations",
    "biomedical": "biomedical research citations",
    "e-commerce": "co-purchase relations in e-commerce",
    "toy": "a toy citation network",
}

_TASK_PHRASES: Dict[TaskKind, str] = {
    TaskKind.NodeClassification: "node classification",
    TaskKind.DiscriminativeLP: "link prediction",
    TaskKind.GenerativeLP: "link prediction",
    TaskKind.NodeDiscrimination: "node discrimination",
    TaskKind.LinkDiscrimination: "link discrimination",
}


def adaptive_prefix(source_domain: str, target_domain: str, task: TaskKind) -> str:
    """One-sentence domain bridge, empty when source and target match."""
    for domain in (source_domain, target_domain):
        if domain not in DOMAIN_DESCRIPTIONS:
            raise UnknownDomain(domain)
    if source_domain == target_domain:
        return ""
    return (
        f"Now perform {_TASK_PHRASES[task]} over a graph representing "
        f"{DOMAIN_DESCRIPTIONS[target_domain]}, rather than "
        f"{DOMAIN_DESCRIPTIONS[source_domain]}."
    )


@dataclass
class TaskContext:
    one_hop: List[str] = field(default_factory=list)
    two_hop: List[str] = field(default_factory=list)
    positive: Optional[str] = None      # discriminative LP
    negative: Optional[str] = None      # discriminative LP
    held_out: Optional[str] = None      # generative LP
    candidates: Tuple[str, ...] = ()    # ND / LD presentation order


def _seeded_rng(*material) -> random.Random:
    digest = hashlib.sha256("|".join(str(m) for m in material).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def build_context(
    graph: TextAttributedGraph,
    center: str,
    seed: int,
    cap: int = 10,
    exclude_node: Optional[str] = None,
) -> TaskContext:
    """Seeded 1-/2-hop neighbor samples, at most `cap` ids each.

    `exclude_node` drops a held-out neighbor from both lists so the held-out
    edge never appears in generative LP contexts.
    """
    one = sorted(neighbors(graph, center, 1))
    two = sorted(neighbors(graph, center, 2))
    if exclude_node is not None:
        one = [n for n in one if n != exclude_node]
        two = [n for n in two if n != exclude_node]
    rng = _seeded_rng("context", graph.graph_id, center, seed)
    if len(one) > cap:
        one = sorted(rng.sample(one, cap))
    if len(two) > cap:
        two = sorted(rng.sample(two, cap))
    return TaskContext(one_hop=one, two_hop=two)


def render(
    task: TaskKind,
    graph: TextAttributedGraph,
    vocab: Vocabulary,
    center: str,
    pool: PromptPool,
    variant_seed: int,
    context: TaskContext,
    domain_prefix: str = "",
    variant_index: Optional[int] = None,
) -> Instruction:
    """Instantiate a task template with language-based ids substituted."""
    def render_id(node_id: str) -> str:
        return vocab.render_id(graph.graph_id, node_id)

    if variant_index is None:
        variant_index = pool.pick_variant(
            task, f"{variant_seed}|{graph.graph_id}|{center}|{task.value}"
        )
    template = pool.variants_for(task)[variant_index]
    prefix = domain_prefix + " " if domain_prefix else ""

    fields: Dict[str, str] = {
        "prefix": prefix,
        "center": render_id(center),
        "one_hop": ", ".join(render_id(n) for n in context.one_hop),
        "two_hop": ", ".join(render_id(n) for n in context.two_hop),
    }

    if task is TaskKind.NodeClassification:
        label = graph.get_node(center).label
        if label is None:
            raise MissingLabel(center)
        target = label
    elif task is TaskKind.DiscriminativeLP:
        if context.positive is None or context.negative is None:
            raise NoValidConfiguration("discriminative LP needs both candidates")
        fields["candidate_a"] = render_id(context.positive)
        fields["candidate_b"] = render_id(context.negative)
        target = render_id(context.positive)
    elif task is TaskKind.GenerativeLP:
        if context.held_out is None:
            raise NoHeldOutEdge(center)
        target = render_id(context.held_out)
    elif task in (TaskKind.NodeDiscrimination, TaskKind.LinkDiscrimination):
        if len(context.candidates) != 3:
            raise NoValidConfiguration("discrimination tasks need 3 candidates")
        fields["a"], fields["b"], fields["c"] = (
            render_id(n) for n in context.candidates
        )
        if context.held_out is None:
            raise NoValidConfiguration("no discrimination target set")
        target = render_id(context.held_out)
    else:  # pragma: no cover - TaskKind is exhaustive
        raise ValueError(task)

    return Instruction(
        instruction_text=template.format(**fields),
        target=target,
        task=task,
        graph_id=graph.graph_id,
        center_node=center,
        variant_index=variant_index,
    )


def make_nd(
    graph: TextAttributedGraph,
    vocab: Vocabulary,
    seed: int,
    pool: Optional[PromptPool] = None,
    domain_prefix: str = "",
) -> Instruction:
    """Odd-one-out by class: two same-class nodes plus one from another class."""
    pool = pool or PromptPool.load_default()
    by_class: Dict[str, List[str]] = {}
    for rec in graph.labeled_nodes():
        by_class.setdefault(rec.label, []).append(rec.node_id)
    majors = sorted(c for c, members in by_class.items() if len(members) >= 2)
    if not majors or len(by_class) < 2:
        raise InsufficientClasses(
            "need one class with >= 2 members and another with >= 1"
        )
    rng = _seeded_rng("nd", graph.graph_id, seed)
    major = rng.choice(majors)
    minors = sorted(n for c, ms in by_class.items() if c != major for n in ms)
    if not minors:
        raise InsufficientClasses("no node outside the majority class")
    a, b = rng.sample(sorted(by_class[major]), 2)
    c = rng.choice(minors)
    order = [a, b, c]
    rng.shuffle(order)
    context = TaskContext(candidates=tuple(order), held_out=c)
    return render(
        TaskKind.NodeDiscrimination, graph, vocab, c, pool, seed, context,
        domain_prefix=domain_prefix,
    )


def make_ld(
    graph: TextAttributedGraph,
    vocab: Vocabulary,
    seed: int,
    pool: Optional[PromptPool] = None,
    domain_prefix: str = "",
) -> Instruction:
    """Non-neighbor spotting: two true neighbors plus one unconnected node."""
    pool = pool or PromptPool.load_default()
    all_nodes = set(graph.node_ids())
    eligible = sorted(
        n
        for n in all_nodes
        if graph.degree(n) >= 2 and len(all_nodes - graph.adjacency(n) - {n}) >= 1
    )
    if not eligible:
        raise NoValidConfiguration(
            "no node with >= 2 neighbors and a non-neighbor"
        )
    rng = _seeded_rng("ld", graph.graph_id, seed)
    center = rng.choice(eligible)
    nbrs = rng.sample(sorted(graph.adjacency(center)), 2)
    non = rng.choice(sorted(all_nodes - graph.adjacency(center) - {center}))
    order = nbrs + [non]
    rng.shuffle(order)
    context = TaskContext(candidates=tuple(order), held_out=non)
    instruction = render(
        TaskKind.LinkDiscrimination, graph, vocab, center, pool, seed, context,
        domain_prefix=domain_prefix,
    )
    # render() uses center for ids already; rebuild with the true center field
    return Instruction(
        instruction_text=instruction.instruction_text,
        target=instruction.target,
        task=instruction.task,
        graph_id=instruction.graph_id,
        center_node=center,
        variant_index=instruction.variant_index,
    )


# --- corpus assembly ---

@dataclass(frozen=True)
class CorpusSpec:
    graph: TextAttributedGraph
    tasks: Tuple[TaskKind, ...]
    count: int
    weight: float = 1.0


@dataclass
class CorpusSummary:
    path: Path
    written: int
    skipped: int
    per_task: Dict[str, int]


def _record_for(
    graph: TextAttributedGraph,
    task: TaskKind,
    vocab: Vocabulary,
    pool: PromptPool,
    seed: int,
    index: int,
    domain_prefix: str,
) -> Instruction:
    rng = _seeded_rng("corpus", graph.graph_id, task.value, seed, index)
    if task is TaskKind.NodeDiscrimination:
        return make_nd(graph, vocab, rng.randrange(2**31), pool, domain_prefix)
    if task is TaskKind.LinkDiscrimination:
        return make_ld(graph, vocab, rng.randrange(2**31), pool, domain_prefix)

    if task is TaskKind.NodeClassification:
        centers = sorted(rec.node_id for rec in graph.labeled_nodes())
        if not centers:
            raise MissingLabel("graph has no labeled nodes")
        center = rng.choice(centers)
        context = build_context(graph, center, seed=rng.randrange(2**31))
    elif task is TaskKind.DiscriminativeLP:
        all_nodes = set(graph.node_ids())
        centers = sorted(
            n
            for n in all_nodes
            if graph.degree(n) >= 1 and len(all_nodes - graph.adjacency(n) - {n}) >= 1
        )
        if not centers:
            raise NoValidConfiguration("no center with a neighbor and non-neighbor")
        center = rng.choice(centers)
        positive = rng.choice(sorted(graph.adjacency(center)))
        negative = rng.choice(sorted(all_nodes - graph.adjacency(center) - {center}))
        context = build_context(graph, center, seed=rng.randrange(2**31))
        context.positive = positive
        context.negative = negative
    elif task is TaskKind.GenerativeLP:
        centers = sorted(n for n in graph.node_ids() if graph.degree(n) >= 1)
        if not centers:
            raise NoHeldOutEdge("graph has no edges")
        center = rng.choice(centers)
        held = rng.choice(sorted(graph.adjacency(center)))
        context = build_context(
            graph, center, seed=rng.randrange(2**31), exclude_node=held
        )
        context.held_out = held
    else:  # pragma: no cover
        raise ValueError(task)

    return render(
        task, graph, vocab, center, pool, rng.randrange(2**31), context,
        domain_prefix=domain_prefix,
    )


def assemble_corpus(
    specs: Sequence[CorpusSpec],
    vocab: Vocabulary,
    seed: int,
    out_path: Path,
    pool: Optional[PromptPool] = None,
    domain_prefix: str = "",
) -> CorpusSummary:
    """Write a shuffled multi-graph multi-task instruction corpus.

    Per-(graph, task) counts follow the specs; render failures are skipped
    and counted.  Deterministic under (specs, vocab, seed).
    """
    pool = pool or PromptPool.load_default()
    records: List[Instruction] = []
    skipped = 0
    per_task: Dict[str, int] = {}
    for spec in specs:
        total = round(spec.count * spec.weight)
        base, extra = divmod(total, len(spec.tasks))
        for t_index, task in enumerate(spec.tasks):
            task_count = base + (1 if t_index < extra else 0)
            for index in range(task_count):
                try:
                    record = _record_for(
                        spec.graph, task, vocab, pool, seed, index, domain_prefix
                    )
                except Exception:  # noqa: BLE001 - per-record skip by contract
                    skipped += 1
                    continue
                records.append(record)
                per_task[task.value] = per_task.get(task.value, 0) + 1

    random.Random(seed).shuffle(records)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_path.parent, prefix=".tmp-corpus-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(
                    json.dumps(
                        {
                            "instruction": record.instruction_text,
                            "output": record.target,
                            "task": record.task.value,
                            "graph": record.graph_id,
                            "center": record.center_node,
                            "variant": record.variant_index,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return CorpusSummary(out_path, len(records), skipped, per_task)
