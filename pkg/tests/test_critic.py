import numpy as np
import pytest

from helpers import connected_graph, small_vocab
from sgenrich.autodiff import Tensor, no_grad
from sgenrich.critic import CriticModel, local_subgraph, score
from sgenrich.graph import SceneGraph, SceneGraphError

VOCAB = small_vocab()


@pytest.fixture(scope="module")
def critic():
    c = CriticModel(VOCAB, embed_dim=8, architecture="a", seed=1)
    c.eval()
    return c


def test_local_subgraph_is_one_hop_neighbourhood():
    on = VOCAB.predicate_index("on")
    g = SceneGraph([2, 3, 4, 5, 6], [(0, on, 1), (1, on, 2), (3, on, 4), (4, on, 0)])
    sub, node_map, edge_ids = local_subgraph(g, [0])
    assert sorted(node_map) == [0, 1, 4]
    assert edge_ids == [0, 3]
    with pytest.raises(SceneGraphError):
        local_subgraph(g, [])
    with pytest.raises(SceneGraphError):
        local_subgraph(g, [9])


def test_architecture_needs_three_layers():
    with pytest.raises(ValueError):
        CriticModel(VOCAB, embed_dim=8, architecture="1 1/2")


def test_output_has_one_logit_per_graph(critic):
    graphs = [connected_graph(np.random.default_rng(s), VOCAB, 4) for s in range(3)]
    with no_grad():
        out = critic(graphs, [None, [3], [0, 1]])
    assert out.shape == (3,)
    assert np.isfinite(score(critic, graphs[0], [1]))


def test_soft_one_hot_matches_hard_graph(critic):
    g = connected_graph(np.random.default_rng(4), VOCAB, 4)
    node_probs = Tensor(np.eye(VOCAB.num_objects)[[g.objects[3]]])
    edge_probs = Tensor(np.eye(VOCAB.num_predicates)[[g.edges[0][1]]])
    with no_grad():
        hard = critic([g], [[3]]).data
        soft = critic([g], [[3]], node_soft=([(0, 3)], node_probs), edge_soft=([(0, 0)], edge_probs)).data
    assert np.allclose(hard, soft, atol=1e-5)


def test_soft_inputs_must_be_distributions(critic):
    g = connected_graph(np.random.default_rng(5), VOCAB, 3)
    bad = Tensor(np.full((1, VOCAB.num_objects), 0.5))
    with pytest.raises(ValueError):
        critic([g], [[0]], node_soft=([(0, 0)], bad))
