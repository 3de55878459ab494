"""Regenerate the trainer test fixtures from the textgnn package.

Run from the repository root after installing the Python package:

    python3 trainer/fixtures/regenerate.py

Outputs (all under trainer/fixtures/):
    corpus.jsonl  - 50 generative link-prediction records over a 50-node ring
    ring.trie     - binary prefix tree over the ring vocabulary
    solo.trie     - a one-candidate tree
    many.trie     - a thirty-candidate tree
"""
from pathlib import Path

from textgnn.constrained_decoder import build_tree, write_tree
from textgnn.graph_vocab import build_vocabulary
from textgnn.instruction_forge import CorpusSpec, TaskKind, assemble_corpus
from textgnn.tag_core import NodeRecord, TextAttributedGraph

HERE = Path(__file__).parent


def ring_graph(n: int = 50) -> TextAttributedGraph:
    records = [
        NodeRecord(f"r{i:02d}", f"item{i:02d} tag{i:02d}") for i in range(n)
    ]
    edges = [(f"r{i:02d}", f"r{(i + 1) % n:02d}") for i in range(n)]
    return TextAttributedGraph("ring", records, edges, "toy")


def main() -> None:
    graph = ring_graph()
    reprs = {rec.node_id: rec.raw_text for rec in graph.nodes}
    vocab = build_vocabulary(reprs, graph_id="ring")
    assemble_corpus(
        [CorpusSpec(graph, (TaskKind.GenerativeLP,), 50)],
        vocab,
        seed=17,
        out_path=HERE / "corpus.jsonl",
    )
    write_tree(build_tree(vocab), HERE / "ring.trie")

    solo = build_vocabulary({"only": "solo beacon"}, graph_id="solo")
    write_tree(build_tree(solo), HERE / "solo.trie")

    many = build_vocabulary(
        {f"c{i:02d}": f"cand{i:02d} mark{i:02d} word{i % 7}" for i in range(30)},
        graph_id="many",
    )
    write_tree(build_tree(many), HERE / "many.trie")


if __name__ == "__main__":
    main()
