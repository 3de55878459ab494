"""Prefix tree over candidate ids and constrained greedy/beam decoding.

Every decode walks root-to-leaf inside the tree, so outputs are valid
candidates by construction.  Scores combine additively (log-probability
semantics); ties break by lexicographic token order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Set, Tuple

from .errors import (
    CorruptFile,
    EmptyCandidateSet,
    PrefixNesting,
    ScorerFailure,
    TokenizerMismatch,
)
from .graph_vocab import Vocabulary

TRIE_MAGIC = b"TGTRIE"
TRIE_VERSION = 1


@dataclass
class TreeNode:
    token: str
    children: Dict[str, "TreeNode"] = field(default_factory=dict)
    terminal: Optional[str] = None  # node-id if a candidate ends here


class PrefixTree:
    def __init__(self, tokenizer_id: str) -> None:
        self.root = TreeNode(token="")
        self.tokenizer_id = tokenizer_id
        self.candidate_count = 0
        self.max_depth = 0

    def insert(self, tokens: Sequence[str], node_id: str) -> None:
        node = self.root
        for token in tokens:
            if node.terminal is not None:
                raise PrefixNesting(
                    f"{node.terminal!r} is a prefix of {node_id!r}"
                )
            node = node.children.setdefault(token, TreeNode(token=token))
        if node.terminal is not None:
            raise PrefixNesting(f"duplicate candidate id for {node_id!r}")
        if node.children:
            raise PrefixNesting(f"{node_id!r} is a prefix of an existing candidate")
        node.terminal = node_id
        self.candidate_count += 1
        self.max_depth = max(self.max_depth, len(tokens))

    def enumerate_paths(self) -> List[Tuple[Tuple[str, ...], str]]:
        """All (token path, node_id) pairs, in token order."""
        out: List[Tuple[Tuple[str, ...], str]] = []

        def walk(node: TreeNode, prefix: Tuple[str, ...]) -> None:
            if node.terminal is not None:
                out.append((prefix, node.terminal))
            for token in sorted(node.children):
                walk(node.children[token], prefix + (token,))

        walk(self.root, ())
        return out


class NextTokenScorer(Protocol):
    def score(
        self, prefix: Sequence[str], allowed: Set[str]
    ) -> Dict[str, float]: ...


@dataclass(frozen=True)
class DecodeResult:
    node_id: str
    token_path: Tuple[str, ...]
    score: float
    steps: int


def build_tree(
    vocab: Vocabulary, candidate_filter: Optional[Set[str]] = None
) -> PrefixTree:
    """Prefix tree over the (optionally filtered) vocabulary candidates."""
    tree = PrefixTree(vocab.tokenizer_id)
    for entry in vocab.entries():
        if candidate_filter is not None and entry.node_id not in candidate_filter:
            continue
        tree.insert(entry.tokens, entry.node_id)
    if tree.candidate_count == 0:
        raise EmptyCandidateSet("no candidates to decode over")
    return tree


def _scores_for(
    scorer: NextTokenScorer, prefix: Tuple[str, ...], allowed: Set[str]
) -> Dict[str, float]:
    try:
        scores = scorer.score(prefix, allowed)
    except Exception as exc:  # noqa: BLE001 - surfaced as ScorerFailure
        raise ScorerFailure(str(exc)) from exc
    missing = allowed - scores.keys()
    if missing:
        raise ScorerFailure(f"no score for allowed tokens {sorted(missing)[:5]}")
    return scores


def decode_greedy(tree: PrefixTree, scorer: NextTokenScorer) -> DecodeResult:
    """Argmax walk through the tree; ties break by token order."""
    node = tree.root
    prefix: Tuple[str, ...] = ()
    total = 0.0
    steps = 0
    while node.terminal is None:
        allowed = set(node.children)
        scores = _scores_for(scorer, prefix, allowed)
        best = max(sorted(allowed), key=lambda t: scores[t])
        total += scores[best]
        prefix += (best,)
        node = node.children[best]
        steps += 1
    return DecodeResult(node.terminal, prefix, total, steps)


def decode_beam(
    tree: PrefixTree, scorer: NextTokenScorer, beam_width: int
) -> List[DecodeResult]:
    """Top-k completed paths by cumulative score.

    With strict argmaxes, beam_width=1 reproduces decode_greedy; with
    beam_width >= candidate_count every candidate is returned, ranked.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    # (cumulative score, token path, tree node)
    frontier: List[Tuple[float, Tuple[str, ...], TreeNode]] = [(0.0, (), tree.root)]
    completed: List[Tuple[float, Tuple[str, ...], str, int]] = []
    while frontier:
        expanded: List[Tuple[float, Tuple[str, ...], TreeNode]] = []
        for total, prefix, node in frontier:
            if node.terminal is not None:
                completed.append((total, prefix, node.terminal, len(prefix)))
                continue
            allowed = set(node.children)
            scores = _scores_for(scorer, prefix, allowed)
            for token in sorted(allowed):
                expanded.append(
                    (total + scores[token], prefix + (token,), node.children[token])
                )
        expanded.sort(key=lambda item: (-item[0], item[1]))
        frontier = expanded[:beam_width]
    completed.sort(key=lambda item: (-item[0], item[1]))
    return [
        DecodeResult(node_id, prefix, total, steps)
        for total, prefix, node_id, steps in completed[:beam_width]
    ]


def step_count_bound(tree: PrefixTree) -> int:
    """Worst-case total child evaluations: candidates times max id length."""
    return tree.candidate_count * tree.max_depth


# --- binary serialization (consumed by the trainer package) ---
#
# Layout (little endian):
#   magic "TGTRIE", u8 version, u16 tokenizer_id length, tokenizer_id bytes,
#   then preorder node records:
#     u16 token length + token bytes (root token is empty),
#     u8 terminal flag, [u16 node_id length + node_id bytes if terminal],
#     u16 child count, children in sorted token order.

def _write_str(out: List[bytes], text: str) -> None:
    data = text.encode("utf-8")
    out.append(struct.pack("<H", len(data)))
    out.append(data)


def write_tree(tree: PrefixTree, path: Path) -> None:
    out: List[bytes] = [TRIE_MAGIC, struct.pack("<B", TRIE_VERSION)]
    _write_str(out, tree.tokenizer_id)

    def walk(node: TreeNode) -> None:
        _write_str(out, node.token)
        if node.terminal is not None:
            out.append(struct.pack("<B", 1))
            _write_str(out, node.terminal)
        else:
            out.append(struct.pack("<B", 0))
        out.append(struct.pack("<H", len(node.children)))
        for token in sorted(node.children):
            walk(node.children[token])

    walk(tree.root)
    Path(path).write_bytes(b"".join(out))


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CorruptFile("truncated trie file")
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def read_u8(self) -> int:
        return self.take(1)[0]

    def read_u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def read_str(self) -> str:
        return self.take(self.read_u16()).decode("utf-8")


def read_tree(path: Path, expected_tokenizer_id: Optional[str] = None) -> PrefixTree:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(TRIE_MAGIC)) != TRIE_MAGIC:
        raise CorruptFile("bad trie magic")
    if reader.read_u8() != TRIE_VERSION:
        raise CorruptFile("unsupported trie version")
    tokenizer_id = reader.read_str()
    if expected_tokenizer_id is not None and tokenizer_id != expected_tokenizer_id:
        raise TokenizerMismatch(f"{tokenizer_id!r} != {expected_tokenizer_id!r}")

    tree = PrefixTree(tokenizer_id)

    def read_node(depth: int) -> TreeNode:
        token = reader.read_str()
        node = TreeNode(token=token)
        if reader.read_u8():
            node.terminal = reader.read_str()
            tree.candidate_count += 1
            tree.max_depth = max(tree.max_depth, depth)
        child_count = reader.read_u16()
        for _ in range(child_count):
            child = read_node(depth + 1)
            node.children[child.token] = child
        return node

    tree.root = read_node(0)
    if reader.pos != len(reader.data):
        raise CorruptFile("trailing bytes in trie file")
    return tree
