import math
import random
import re

import pytest

from textgnn.errors import LayerFailure, UnknownDomain
from textgnn.llm_gateway import CompletionGateway, GatewayConfig, MockBackend
from textgnn.prompt_gnn import (
    AGG_TEMPLATE,
    GnnConfig,
    build_agg_prompt,
    build_init_prompt,
    permuted_run,
    read_trace,
    run_gnn,
    sample_neighbors,
    templates_for,
    write_trace,
)
from textgnn.tokenizing import DEFAULT_TOKENIZER

from conftest import make_graph, mock_gateway

BIG = 10_000  # budget large enough that truncation never bites


def wide_config(layers=2, **kwargs):
    kwargs.setdefault("init_budget_tokens", BIG)
    kwargs.setdefault("layer_budget_tokens", (BIG,) * layers)
    return GnnConfig(layers=layers, **kwargs)


def path_graph():
    return make_graph(
        {"a": "a", "b": "b", "c": "c"}, [("a", "b"), ("b", "c")]
    )


def propagation_oracle(graph, config):
    """Brute-force token-set propagation following the same sampling."""
    sets = {
        n: set(DEFAULT_TOKENIZER.tokenize(graph.get_node(n).raw_text))
        for n in graph.node_ids()
    }
    for layer in range(1, config.layers + 1):
        nxt = {}
        for node in graph.node_ids():
            merged = set(sets[node])
            for nbr in sample_neighbors(graph, node, config, layer):
                merged |= sets[nbr]
            nxt[node] = merged
        sets = nxt
    return {n: " ".join(sorted(s)) for n, s in sets.items()}


# --- templates and config ---

def test_template_registry():
    assert "{title}" in templates_for("computer-science").init_template
    assert "{text}" == templates_for("toy").init_template
    with pytest.raises(UnknownDomain):
        templates_for("astrology")


def test_config_validation():
    with pytest.raises(ValueError):
        GnnConfig(layers=0)
    with pytest.raises(ValueError):
        GnnConfig(sample_ratio=0.0)
    with pytest.raises(ValueError):
        GnnConfig(sample_ratio=1.5)
    with pytest.raises(ValueError):
        GnnConfig(neighbor_cap=0)
    with pytest.raises(ValueError):
        GnnConfig(layers=4, layer_budget_tokens=(60, 30, 12))
    with pytest.raises(ValueError):
        GnnConfig(layers=2, layer_budget_tokens=(30, 60))


def test_default_config_values():
    config = GnnConfig()
    assert config.layers == 3
    assert config.sample_ratio == 0.6
    assert config.neighbor_cap == 20
    assert config.final_id_max_tokens == 10


# --- prompts ---

def test_agg_prompt_contains_contrastive_clause():
    assert (
        "Note connected nodes should share similar semantics and vice versa"
        in AGG_TEMPLATE
    )


def test_agg_prompt_empty_neighborhood():
    prompt = build_agg_prompt("x", [], budget=12)
    assert "neighbors are []" in prompt
    assert "update a concise yet meaningful representation" in prompt


def test_agg_prompt_rejects_empty_center():
    with pytest.raises(ValueError):
        build_agg_prompt("", ["a"], budget=12)


def test_init_prompt_title_abstract_split():
    prompt = build_init_prompt(
        "A Title\nThe abstract body.", templates_for("computer-science")
    )
    assert "The title of the paper is A Title," in prompt
    assert "the abstract of the paper is The abstract body." in prompt


def test_init_prompt_sentence_fallback():
    prompt = build_init_prompt(
        "A Title. The rest.", templates_for("e-commerce")
    )
    assert "The title of the item is A Title," in prompt


# --- neighbor sampling ---

def test_sample_isolated_node():
    g = make_graph({"a": "ta", "b": "tb"}, [])
    assert sample_neighbors(g, "a", GnnConfig(), layer=1) == []


def test_sample_floor_of_one():
    g = make_graph({"a": "ta", "b": "tb"}, [("a", "b")])
    config = GnnConfig(sample_ratio=0.3)
    assert sample_neighbors(g, "a", config, layer=1) == ["b"]


def test_sample_full_ratio_returns_all(toy_graph):
    config = GnnConfig(sample_ratio=1.0)
    for node in toy_graph.node_ids():
        assert sample_neighbors(toy_graph, node, config, layer=1) == sorted(
            toy_graph.adjacency(node)
        )


def test_sample_respects_cap():
    leaves = {f"l{i:02d}": f"t{i}" for i in range(30)}
    g = make_graph(
        {"hub": "hub", **leaves}, [("hub", leaf) for leaf in leaves]
    )
    config = GnnConfig(sample_ratio=1.0, neighbor_cap=20)
    sampled = sample_neighbors(g, "hub", config, layer=1)
    assert len(sampled) == 20
    assert sampled == sorted(sampled)
    assert set(sampled) <= set(leaves)


def test_sample_deterministic_per_layer(toy_graph):
    config = GnnConfig(sample_ratio=0.6, seed=3)
    for node in toy_graph.node_ids():
        first = sample_neighbors(toy_graph, node, config, layer=2)
        again = sample_neighbors(toy_graph, node, config, layer=2)
        assert first == again


def test_sampling_law_spot_checks():
    rng = random.Random(11)
    for _ in range(200):
        deg = rng.randint(1, 40)
        ratio = rng.uniform(0.05, 1.0)
        cap = rng.randint(1, 25)
        leaves = {f"l{i:02d}": f"t{i}" for i in range(deg)}
        g = make_graph(
            {"hub": "hub", **leaves}, [("hub", leaf) for leaf in leaves]
        )
        config = GnnConfig(
            sample_ratio=ratio, neighbor_cap=cap, seed=rng.randrange(100)
        )
        sampled = sample_neighbors(g, "hub", config, layer=1)
        assert len(sampled) == min(cap, max(1, math.ceil(ratio * deg)))
        assert len(set(sampled)) == len(sampled)


# --- layer execution ---

def test_single_node_identity():
    g = make_graph({"a": "t"}, [])
    trace = run_gnn(g, wide_config(layers=1), completer=mock_gateway())
    assert trace.final_reprs == {"a": "t"}


def test_path_graph_one_layer():
    config = wide_config(layers=1, sample_ratio=1.0)
    trace = run_gnn(path_graph(), config, completer=mock_gateway())
    assert trace.states[1].reprs == {"a": "a b", "b": "a b c", "c": "b c"}


def test_isolated_node_unchanged_through_layers():
    g = make_graph({"a": "ta", "b": "tb", "z": "zulu"}, [("a", "b")])
    trace = run_gnn(g, wide_config(layers=3), completer=mock_gateway())
    for state in trace.states:
        assert state.reprs["z"] == "zulu"


def test_trace_has_layer_plus_one_states(toy_graph):
    trace = run_gnn(toy_graph, wide_config(layers=2), completer=mock_gateway())
    assert len(trace.states) == 3
    assert [s.layer_index for s in trace.states] == [0, 1, 2]
    for state in trace.states:
        assert set(state.reprs) == set(toy_graph.node_ids())
        assert all(state.reprs.values())


def test_provenance_matches_sampler(toy_graph):
    config = wide_config(layers=2, sample_ratio=0.6, seed=9)
    trace = run_gnn(toy_graph, config, completer=mock_gateway())
    for state in trace.states[1:]:
        for node in toy_graph.node_ids():
            expected = sample_neighbors(
                toy_graph, node, config, state.layer_index
            )
            assert state.provenance[node] == expected


def test_synchrony_against_oracle(toy_graph):
    config = wide_config(layers=3, sample_ratio=0.6, seed=4)
    trace = run_gnn(toy_graph, config, completer=mock_gateway())
    assert trace.final_reprs == propagation_oracle(toy_graph, config)


def test_determinism(toy_graph):
    config = wide_config(layers=2, seed=1)
    a = run_gnn(toy_graph, config, completer=mock_gateway())
    b = run_gnn(toy_graph, config, completer=mock_gateway())
    assert [s.reprs for s in a.states] == [s.reprs for s in b.states]
    assert [s.provenance for s in a.states] == [s.provenance for s in b.states]


def test_budget_truncation_enforced(toy_graph):
    config = GnnConfig(
        layers=2, init_budget_tokens=5, layer_budget_tokens=(4, 3)
    )
    trace = run_gnn(toy_graph, config, completer=mock_gateway())
    budgets = {0: 5, 1: 4, 2: 3}
    for state in trace.states:
        for text in state.reprs.values():
            assert DEFAULT_TOKENIZER.count(text) <= budgets[state.layer_index]


def test_oversized_raw_text_pre_truncated():
    from textgnn.prompt_gnn import initialize_features

    long_text = " ".join(f"word{i}" for i in range(300))
    g = make_graph({"a": long_text}, [])
    gateway = mock_gateway(context_window=50)
    config = GnnConfig(layers=1, init_budget_tokens=20, layer_budget_tokens=(10,))
    state = initialize_features(g, templates_for("toy"), gateway, config)
    assert DEFAULT_TOKENIZER.count(state.reprs["a"]) <= 20


def test_layer_failure_collects_nodes():
    class FlakyBackend:
        model_id = "mock"

        def __init__(self):
            self.inner = MockBackend()

        def complete(self, request):
            if "basil" in request.prompt:
                raise RuntimeError("boom")
            return self.inner.complete(request)

    g = make_graph({"a": "anchor", "b": "basil"}, [("a", "b")])
    gateway = CompletionGateway(FlakyBackend(), GatewayConfig())
    with pytest.raises(LayerFailure) as excinfo:
        run_gnn(g, wide_config(layers=1), completer=gateway)
    assert "b" in excinfo.value.failures


def test_requires_gateway(toy_graph):
    with pytest.raises(ValueError):
        run_gnn(toy_graph, wide_config())


# --- permuted runs ---

def test_shuffle_nodes_matches_baseline(toy_graph):
    config = wide_config(layers=2, seed=2)
    baseline = run_gnn(toy_graph, config, completer=mock_gateway())
    permuted = permuted_run(
        toy_graph, config, "shuffle_nodes", perm_seed=77, completer=mock_gateway()
    )
    assert permuted.final_reprs == baseline.final_reprs


def test_shuffle_seeds_agree(toy_graph):
    config = wide_config(layers=2, seed=2)
    for mode in ("shuffle_nodes", "shuffle_tokens"):
        runs = [
            permuted_run(
                toy_graph, config, mode, perm_seed=s, completer=mock_gateway()
            ).final_reprs
            for s in (1, 2, 3)
        ]
        assert runs[0] == runs[1] == runs[2]


def test_shuffle_tokens_position_markers(toy_graph):
    prompts = []

    class RecordingBackend:
        model_id = "mock"

        def __init__(self):
            self.inner = MockBackend()

        def complete(self, request):
            prompts.append(request.prompt)
            return self.inner.complete(request)

    gateway = CompletionGateway(RecordingBackend(), GatewayConfig())
    permuted_run(
        toy_graph,
        wide_config(layers=1, sample_ratio=1.0),
        "shuffle_tokens",
        perm_seed=5,
        completer=gateway,
    )
    agg_prompts = [p for p in prompts if p.startswith("Given the central node")]
    assert agg_prompts
    for prompt in agg_prompts:
        marks = sorted(int(k) for k in re.findall(r"<p(\d+)>", prompt))
        assert marks == list(range(1, len(marks) + 1))


def test_unknown_permutation_mode(toy_graph):
    with pytest.raises(ValueError):
        permuted_run(
            toy_graph, wide_config(), "shuffle_everything", 0,
            completer=mock_gateway(),
        )


# --- trace files ---

def test_trace_round_trip(tmp_path, toy_graph):
    trace = run_gnn(toy_graph, wide_config(layers=2), completer=mock_gateway())
    path = tmp_path / "toy.jsonl"
    write_trace(trace, path)
    loaded = read_trace(path)
    assert loaded.graph_id == "toy"
    assert [s.reprs for s in loaded.states] == [s.reprs for s in trace.states]
    # 12 nodes x (layers + 1) records
    assert len(path.read_text().splitlines()) == 12 * 3
