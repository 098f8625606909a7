import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_graph, small_vocab
from sgenrich.graph import (
    SceneGraph,
    SceneGraphError,
    UnknownCategoryError,
    Vocabulary,
    add_dummy_node,
    batch,
    deserialize,
    induced_subgraph,
    is_valid,
    neighbors,
    random_subgraph,
    render_sentences,
    serialize,
    strip_dummy_node,
    to_dot,
    unbatch,
    validate,
    weakly_connected,
)

VOCAB = small_vocab()


def test_vocabulary_places_specials_first_and_indexes_labels():
    assert VOCAB.object_names[:2] == ("unknown_obj", "image")
    assert VOCAB.predicate_names[:3] == ("unknown_pred", "none_pred", "in_image")
    assert VOCAB.object_index("dog") == VOCAB.object_names.index("dog")
    assert VOCAB.real_objects == list(range(2, VOCAB.num_objects))
    with pytest.raises(UnknownCategoryError):
        VOCAB.object_index("zebra")
    with pytest.raises(UnknownCategoryError):
        VOCAB.predicate_index("under")


def test_vocabulary_json_round_trip_and_digest():
    again = Vocabulary.from_json(VOCAB.to_json())
    assert again == VOCAB
    assert again.digest() == VOCAB.digest()
    assert Vocabulary.build(["x"], ["y"]).digest() != VOCAB.digest()


@pytest.mark.parametrize("doc", [
    {"objects": ["a", "a"], "predicates": ["p"], "specials": {}},
    {"objects": ["unknown_obj", "image"], "predicates": ["unknown_pred", "none_pred", "in_image", "p"],
     "specials": {"unknown_obj": 0, "image": 1, "unknown_pred": 0, "none_pred": 1, "in_image": 2}},
    {"objects": ["x"]},
])
def test_malformed_vocabularies_are_rejected(doc):
    with pytest.raises(SceneGraphError):
        Vocabulary.from_dict(doc)


def test_validate_reports_each_violation():
    dog, on = VOCAB.object_index("dog"), VOCAB.predicate_index("on")
    assert validate(SceneGraph([]), VOCAB) == ["graph has no nodes"]
    errors = validate(SceneGraph([dog, 99], [(0, on, 0), (0, on, 5), (0, 42, 1), (0, on, 1), (0, on, 1)]), VOCAB)
    text = " ".join(errors)
    for fragment in ("out of range", "self-loop", "dangling object", "predicate category 42", "duplicate"):
        assert fragment in text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dummy_node_round_trip(seed):
    g = random_graph(np.random.default_rng(seed), VOCAB)
    d = add_dummy_node(g, VOCAB)
    assert d.num_nodes == g.num_nodes + 1
    assert sum(1 for e in d.edges if e[1] == VOCAB.in_image) == g.num_nodes
    assert weakly_connected(d)
    assert strip_dummy_node(d, VOCAB) == g
    with pytest.raises(SceneGraphError):
        add_dummy_node(d, VOCAB)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_serialize_round_trip(seed):
    g = random_graph(np.random.default_rng(seed), VOCAB)
    assert deserialize(serialize(g, VOCAB), VOCAB) == g


@pytest.mark.parametrize("text", [
    "not json",
    "[]",
    json.dumps({"objects": [], "edges": []}),
    json.dumps({"version": 2, "objects": [], "edges": []}),
    json.dumps({"version": 1, "objects": ["dog"], "edges": [[0, "on"]]}),
    json.dumps({"version": 1, "objects": ["zebra"], "edges": []}),
])
def test_deserialize_rejects_bad_documents(text):
    with pytest.raises(SceneGraphError):
        deserialize(text, VOCAB)


def test_sentences_cover_edges_then_isolated_nodes():
    g = SceneGraph([VOCAB.object_index(x) for x in ("girl", "hat", "dog")],
                   [(0, VOCAB.predicate_index("has"), 1)])
    assert render_sentences(g, VOCAB) == ["girl has hat", "dog"]
    with pytest.raises(SceneGraphError):
        render_sentences(add_dummy_node(g, VOCAB), VOCAB)


def test_dot_output_highlights_requested_nodes():
    g = SceneGraph([VOCAB.object_index("girl"), VOCAB.object_index("hat")], [(0, VOCAB.predicate_index("has"), 1)])
    dot = to_dot(g, VOCAB, highlight=[1])
    assert dot.startswith("digraph scene_graph {")
    assert 'n0 -> n1 [label="has"]' in dot
    assert 'fillcolor="gold"' in dot.split("n1 [")[1].split("\n")[0]
    assert "gold" not in dot.split("n0 [")[1].split("\n")[0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=5))
def test_batch_unbatch_round_trip(seeds):
    graphs = [random_graph(np.random.default_rng(s), VOCAB) for s in seeds]
    gb = batch(graphs)
    assert gb.num_graphs == len(graphs)
    assert gb.num_nodes == sum(g.num_nodes for g in graphs)
    assert unbatch(gb) == graphs
    for k, (s, _, o) in enumerate(gb.edges):
        assert gb.node_graph[s] == gb.node_graph[o] == gb.edge_graph[k]


def test_batch_of_nothing_is_an_error():
    with pytest.raises(SceneGraphError):
        batch([])


def test_induced_subgraph_keeps_internal_edges():
    on = VOCAB.predicate_index("on")
    g = SceneGraph([2, 3, 4, 5], [(0, on, 1), (1, on, 2), (2, on, 3), (3, on, 0)])
    sub, node_map, edge_ids = induced_subgraph(g, [3, 0, 1])
    assert sub.objects == (2, 3, 5)
    assert node_map == {0: 0, 1: 1, 3: 2}
    assert edge_ids == [0, 3]
    assert sub.edges == ((0, on, 1), (2, on, 0))
    assert neighbors(g, {0}) == {1, 3}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_random_subgraph_is_bounded_and_valid(seed, k):
    g = random_graph(np.random.default_rng(seed), VOCAB, min_nodes=1)
    sub = random_subgraph(g, k, seed)
    assert sub.num_nodes == min(k, g.num_nodes)
    assert is_valid(sub, VOCAB)
    assert random_subgraph(g, k, seed) == sub
