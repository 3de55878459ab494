import random
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pytest

from textgnn.llm_gateway import CompletionGateway, GatewayConfig, MockBackend
from textgnn.tag_core import NodeRecord, TextAttributedGraph

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURE_DIR = REPO_ROOT / "fixtures" / "toy_citation"
GOLDEN_DIR = REPO_ROOT / "goldens" / "prompts"
CONFIG_DIR = REPO_ROOT / "configs"


def make_graph(
    texts: Dict[str, str],
    edges: Sequence[Tuple[str, str]],
    labels: Optional[Dict[str, str]] = None,
    graph_id: str = "g",
    domain_tag: str = "toy",
) -> TextAttributedGraph:
    labels = labels or {}
    records = [
        NodeRecord(node_id, text, labels.get(node_id))
        for node_id, text in texts.items()
    ]
    return TextAttributedGraph(graph_id, records, edges, domain_tag)


def random_graph(
    rng: random.Random,
    max_nodes: int = 30,
    graph_id: str = "rand",
    word_pool: Optional[List[str]] = None,
) -> TextAttributedGraph:
    """Connected-ish random graph with short random texts."""
    pool = word_pool or [f"w{i}" for i in range(40)]
    n = rng.randint(2, max_nodes)
    node_ids = [f"v{i:02d}" for i in range(n)]
    texts = {
        node_id: " ".join(rng.sample(pool, rng.randint(1, 4)))
        for node_id in node_ids
    }
    edges = set()
    for i in range(1, n):
        edges.add(tuple(sorted((node_ids[i], node_ids[rng.randrange(i)]))))
    extra = rng.randint(0, n)
    for _ in range(extra):
        a, b = rng.sample(node_ids, 2)
        edges.add(tuple(sorted((a, b))))
    return make_graph(texts, sorted(edges), graph_id=graph_id)


def mock_gateway(cache_dir=None, **kwargs) -> CompletionGateway:
    config = GatewayConfig(cache_dir=cache_dir, **kwargs)
    return CompletionGateway(MockBackend(), config)


@pytest.fixture
def toy_graph():
    from textgnn.tag_core import load_graph

    return load_graph(
        FIXTURE_DIR / "nodes.tsv",
        FIXTURE_DIR / "edges.tsv",
        FIXTURE_DIR / "labels.tsv",
        domain_tag="toy",
        graph_id="toy",
    )
