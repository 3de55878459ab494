"""Language-based graph vocabulary: node -> finite token sequence.

Every node of a source graph is mapped to an ordered sequence of natural
language tokens drawn from the pipeline tokenizer, with deterministic
disambiguation of colliding id strings.  Coverage and token-entropy
analytics live here as well.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import CorruptFile, EmptyRepresentation, TokenizerMismatch
from .tag_core import TextAttributedGraph
from .tokenizing import DEFAULT_TOKENIZER, Tokenizer

VOCAB_FORMAT_VERSION = 1


@dataclass(frozen=True)
class LanguageId:
    node_id: str
    graph_id: str
    tokens: Tuple[str, ...]

    @property
    def rendered(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


class Vocabulary:
    """Immutable map from (graph_id, node_id) to a language-based id."""

    def __init__(
        self,
        entries: Sequence[LanguageId],
        tokenizer_id: str,
        source_graphs: Sequence[str],
    ) -> None:
        self.tokenizer_id = tokenizer_id
        self.source_graphs: Tuple[str, ...] = tuple(source_graphs)
        self._entries: Dict[Tuple[str, str], LanguageId] = {
            (e.graph_id, e.node_id): e for e in entries
        }

    def entries(self) -> List[LanguageId]:
        return [self._entries[key] for key in sorted(self._entries)]

    def get(self, graph_id: str, node_id: str) -> Optional[LanguageId]:
        return self._entries.get((graph_id, node_id))

    def render_id(self, graph_id: str, node_id: str) -> str:
        entry = self.get(graph_id, node_id)
        if entry is None:
            raise KeyError(f"no id for node {node_id!r} in graph {graph_id!r}")
        return entry.rendered

    def rendered_ids(self) -> List[str]:
        return [e.rendered for e in self.entries()]

    def node_for_rendered(self, rendered: str) -> Optional[LanguageId]:
        for entry in self._entries.values():
            if entry.rendered == rendered:
                return entry
        return None

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.tokenizer_id == other.tokenizer_id
            and self.source_graphs == other.source_graphs
            and self._entries == other._entries
        )


def _disambiguate(
    ordered: Sequence[Tuple[str, str, Tuple[str, ...]]],
) -> List[LanguageId]:
    """Append " #k" (k = 2, 3, ...) to repeated id strings, in input order."""
    taken: Dict[str, int] = {}
    out: List[LanguageId] = []
    for graph_id, node_id, tokens in ordered:
        rendered = " ".join(tokens)
        if rendered not in taken:
            taken[rendered] = 1
            out.append(LanguageId(node_id, graph_id, tokens))
            continue
        while True:
            taken[rendered] += 1
            candidate = tokens + (f"#{taken[rendered]}",)
            cand_rendered = " ".join(candidate)
            if cand_rendered not in taken:
                taken[cand_rendered] = 1
                out.append(LanguageId(node_id, graph_id, candidate))
                break
    return out


def build_vocabulary(
    final_reprs: Mapping[str, str],
    tokenizer: Optional[Tokenizer] = None,
    max_tokens: int = 10,
    graph_id: str = "graph",
) -> Vocabulary:
    """Map every node to the first `max_tokens` tokens of its representation.

    Colliding id strings get a deterministic " #k" suffix in node-id order.
    """
    if not final_reprs:
        raise EmptyRepresentation("no final representations")
    tok = tokenizer or DEFAULT_TOKENIZER
    ordered: List[Tuple[str, str, Tuple[str, ...]]] = []
    for node_id in sorted(final_reprs):
        tokens = tuple(tok.tokenize(final_reprs[node_id])[:max_tokens])
        if not tokens:
            raise EmptyRepresentation(node_id)
        ordered.append((graph_id, node_id, tokens))
    entries = _disambiguate(ordered)
    return Vocabulary(entries, tok.tokenizer_id, [graph_id])


def coverage(vocab: Vocabulary, graphs: Iterable[TextAttributedGraph]) -> float:
    """Fraction of graph nodes holding a non-empty id in the vocabulary."""
    total = 0
    covered = 0
    for graph in graphs:
        for node_id in graph.node_ids():
            total += 1
            entry = vocab.get(graph.graph_id, node_id)
            if entry is not None and len(entry) > 0:
                covered += 1
    if total == 0:
        return 0.0
    return covered / total


def entropy(vocab: Vocabulary) -> float:
    """Shannon entropy (bits) of the token distribution across all ids."""
    counts: Counter = Counter()
    for entry in vocab.entries():
        counts.update(entry.tokens)
    total = sum(counts.values())
    if total == 0:
        return 0.0
    h = 0.0
    for count in counts.values():
        p = count / total
        h -= p * math.log2(p)
    return h


def merge(vocabs: Sequence[Vocabulary]) -> Vocabulary:
    """Union of vocabularies with cross-graph collisions re-disambiguated."""
    if not vocabs:
        raise ValueError("nothing to merge")
    tokenizer_id = vocabs[0].tokenizer_id
    for v in vocabs[1:]:
        if v.tokenizer_id != tokenizer_id:
            raise TokenizerMismatch(
                f"{v.tokenizer_id!r} != {tokenizer_id!r}"
            )
    ordered: List[Tuple[str, str, Tuple[str, ...]]] = []
    source_graphs: List[str] = []
    for v in vocabs:
        source_graphs.extend(v.source_graphs)
        for entry in v.entries():
            # Strip earlier disambiguation suffixes so the merged namespace
            # re-resolves collisions consistently.
            tokens = entry.tokens
            if len(tokens) > 1 and tokens[-1].startswith("#"):
                tokens = tokens[:-1]
            ordered.append((entry.graph_id, entry.node_id, tokens))
    entries = _disambiguate(ordered)
    return Vocabulary(entries, tokenizer_id, source_graphs)


def serialize(vocab: Vocabulary, path: Path) -> None:
    payload = {
        "version": VOCAB_FORMAT_VERSION,
        "tokenizer_id": vocab.tokenizer_id,
        "source_graphs": list(vocab.source_graphs),
        "entries": [
            {
                "node_id": e.node_id,
                "graph_id": e.graph_id,
                "tokens": list(e.tokens),
            }
            for e in vocab.entries()
        ],
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def deserialize(path: Path) -> Vocabulary:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload["version"] != VOCAB_FORMAT_VERSION:
            raise CorruptFile(f"unsupported vocabulary version {payload['version']}")
        entries = [
            LanguageId(e["node_id"], e["graph_id"], tuple(e["tokens"]))
            for e in payload["entries"]
        ]
        return Vocabulary(entries, payload["tokenizer_id"], payload["source_graphs"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptFile(str(exc)) from exc
