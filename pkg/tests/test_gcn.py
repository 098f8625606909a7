from fractions import Fraction

import numpy as np
import pytest

from helpers import random_graph, small_vocab
from sgenrich.autodiff import LayerFactory, RngStream
from sgenrich.gcn import (
    DISCRIMINATOR_ARCHITECTURES,
    GENERATOR_ARCHITECTURES,
    GConvLayer,
    GcnStack,
    aggregate_graph,
    layer_widths,
    parse_architecture,
)
from sgenrich.graph import SceneGraph, batch


def _factory(seed=0):
    return LayerFactory(np.random.default_rng(seed), RngStream(seed))


@pytest.mark.parametrize("letter", sorted(GENERATOR_ARCHITECTURES))
def test_generator_presets_parse_and_fit_the_default_width(letter):
    widths = layer_widths(parse_architecture(letter, GENERATOR_ARCHITECTURES), 256)
    assert widths[0] == widths[-1] == 256


@pytest.mark.parametrize("letter", sorted(DISCRIMINATOR_ARCHITECTURES))
def test_discriminator_presets_shrink_to_an_eighth(letter):
    widths = layer_widths(parse_architecture(f"({letter})", DISCRIMINATOR_ARCHITECTURES), 128)
    assert widths[0] == 128 and widths[-1] == 16


def test_free_form_architecture_strings():
    assert parse_architecture("1 2 1/2") == [Fraction(1), Fraction(2), Fraction(1, 2)]
    for bad in ("1", "1 x", "1 0", "1 -2", "1 1/0"):
        with pytest.raises(ValueError):
            parse_architecture(bad)
    with pytest.raises(ValueError):
        layer_widths([Fraction(1), Fraction(1, 3)], 8)


def test_gconv_widths():
    layer = GConvLayer(4, 6, _factory())
    assert layer.hidden == 20
    assert [l.weight.shape for l in layer.f_g.linears] == [(12, 20), (20, 60)]
    assert [l.weight.shape for l in layer.f_o.linears] == [(24, 20), (20, 6)]
    with pytest.raises(ValueError):
        layer(np.zeros((2, 5)), np.zeros((1, 5)), [(0, 0, 1)])


def test_stack_shapes_and_depth_truncation():
    vocab = small_vocab()
    stack = GcnStack(vocab.num_objects, vocab.num_predicates, 8, "1 2 1", _factory(),
                     node_classes=vocab.num_objects, edge_classes=vocab.num_predicates)
    assert stack.depth == 2 and stack.widths == [8, 16, 8]
    gb = batch([random_graph(np.random.default_rng(s), vocab, n=4, density=0.5) for s in range(3)])
    out = stack(gb)
    assert out.nodes.shape == (gb.num_nodes, 8)
    assert out.edges.shape == (gb.num_edges, 8)
    assert stack.node_logits(out, np.arange(gb.num_nodes)).shape == (gb.num_nodes, vocab.num_objects)
    short = stack(gb, depth=1)
    assert short.nodes_last.shape == (gb.num_nodes, 16)


def test_soft_embedding_of_a_one_hot_matches_the_hard_lookup():
    vocab = small_vocab()
    stack = GcnStack(vocab.num_objects, vocab.num_predicates, 8, "1 1", _factory())
    g = SceneGraph([2, 3, 4], [(0, 3, 1)])
    gb = batch([g])
    probs = np.eye(vocab.num_objects)[[3]]
    hard = stack(gb).nodes.data
    soft = stack(gb, node_soft=(np.array([1]), probs)).nodes.data
    assert np.allclose(hard, soft, atol=1e-6)


def test_aggregate_pools_zero_for_edgeless_graphs():
    vocab = small_vocab()
    stack = GcnStack(vocab.num_objects, vocab.num_predicates, 8, "1 1", _factory())
    gb = batch([SceneGraph([2, 3], []), SceneGraph([2, 3], [(0, 4, 1)])])
    out = stack(gb)
    pooled = aggregate_graph(out.nodes, out.edges, gb).data
    assert pooled.shape == (2, 16)
    assert np.all(pooled[0, 8:] == 0)
    assert np.any(pooled[1, 8:] != 0)
