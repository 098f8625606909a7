"""Graph convolution over scene graphs and configurable GCN stacks."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff import MLP, Embedding, Linear, Module
from .autodiff import functional as F

GENERATOR_ARCHITECTURES = {
    "a": "1 1 1 1 1",
    "b": "1 1 1 1 1 1 1",
    "c": "1 4 2 2 4 1",
    "d": "1 4 2 1 1 2 4 1",
    "e": "1 4 2 1 1/2 1/2 1 2 4 1",
    "f": "1 4 2 1 1/2 1/4 1/4 1/2 1 2 4 1",
}
DISCRIMINATOR_ARCHITECTURES = {
    "a": "1 1/2 1/4 1/8 1/8 1/8",
    "b": "1 1 1/2 1/2 1/4 1/4 1/8 1/8 1/8",
    "c": "1 2 2 1 1 1/2 1/2 1/4 1/4 1/8 1/8 1/8",
}


def parse_architecture(text, presets=None):
    """Whitespace-separated positive rationals, or a preset letter from ``presets``."""
    text = str(text).strip()
    if presets and text.lower().strip("()") in presets:
        text = presets[text.lower().strip("()")]
    try:
        multipliers = [Fraction(tok) for tok in text.split()]
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"malformed architecture string {text!r}") from None
    if len(multipliers) < 2:
        raise ValueError(f"architecture {text!r} needs at least two multipliers")
    if any(m <= 0 for m in multipliers):
        raise ValueError(f"architecture {text!r} has a non-positive multiplier")
    return multipliers


def layer_widths(multipliers, embed_dim):
    widths = []
    for m in multipliers:
        w = m * embed_dim
        if w.denominator != 1:
            raise ValueError(f"multiplier {m} times embed dim {embed_dim} is not integral")
        widths.append(int(w))
    return widths


class GConvLayer(Module):
    """One message-passing step over (subject, predicate, object) triplets.

    Every edge's concatenated triplet goes through ``f_g`` and splits into
    subject/predicate/object candidates of width ``H = 2 (d_in + d_out)``.
    Predicates update through ``f_r(v_r, cand_r)``; each node averages all
    subject-slot and object-slot candidates addressed to it (one joint mean)
    and updates through ``f_o(v_i, pooled)``.  Nodes without edges pool a
    zero vector.
    """

    def __init__(self, d_in, d_out, factory, activation="leakyrelu", norm="none", dropout=0.0):
        self.d_in, self.d_out = d_in, d_out
        self.hidden = h = 2 * (d_in + d_out)
        kw = dict(activation=activation, norm=norm, dropout=dropout)
        self.f_g = MLP([3 * d_in, h, 3 * h], factory, final_activation=True, **kw)
        self.f_r = MLP([d_in + h, h, d_out], factory, **kw)
        self.f_o = MLP([d_in + h, h, d_out], factory, **kw)

    def forward(self, node_feats, pred_feats, edges, num_nodes=None):
        if node_feats.shape[1] != self.d_in or pred_feats.shape[1] != self.d_in:
            raise ValueError(f"GConv expects width {self.d_in}, got nodes {node_feats.shape} / preds {pred_feats.shape}")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
        num_nodes = node_feats.shape[0] if num_nodes is None else num_nodes
        subj, obj = edges[:, 0], edges[:, 2]
        triplets = F.concat([F.take_rows(node_feats, subj), pred_feats, F.take_rows(node_feats, obj)], axis=1)
        cand_s, cand_r, cand_o = F.split(self.f_g(triplets), [self.hidden] * 3, axis=1)
        new_preds = self.f_r(F.concat([pred_feats, cand_r], axis=1))
        pooled = F.segment_mean(F.concat([cand_s, cand_o], axis=0), np.concatenate([subj, obj]), num_nodes)
        new_nodes = self.f_o(F.concat([node_feats, pooled], axis=1))
        return new_nodes, new_preds


@dataclass
class GcnOutput:
    nodes: object          # skip-fused node features (head input)
    edges: object          # skip-fused predicate features
    nodes_first: object    # V_O^(0): embedded input nodes
    nodes_last: object     # V_O^(L): raw last-layer node features
    edges_first: object
    edges_last: object


class GcnStack(Module):
    """Embeddings, stacked GConv layers, an input-to-output skip and optional heads.

    The architecture multipliers ``x_1 .. x_n`` give ``n - 1`` layers with
    widths ``x_i * embed_dim -> x_{i+1} * embed_dim``.  The skip concatenates
    layer-0 with last-layer features and projects back to the last width.
    """

    def __init__(self, num_objects, num_predicates, embed_dim, architecture, factory, *,
                 gconv_activation="leakyrelu", gconv_norm="none", gconv_dropout=0.0,
                 node_classes=None, edge_classes=None, classifier_layers=1,
                 fc_activation="leakyrelu", fc_norm="none", fc_dropout=0.0, presets=None, skip=True):
        multipliers = architecture if isinstance(architecture, list) else parse_architecture(architecture, presets)
        self.widths = layer_widths(multipliers, embed_dim)
        if self.widths[0] != embed_dim:
            raise ValueError("the first multiplier must give the embedding width")
        self.embed_dim = embed_dim
        self.obj_embed = Embedding(num_objects, embed_dim, factory.rng)
        self.pred_embed = Embedding(num_predicates, embed_dim, factory.rng)
        self.layers = [
            GConvLayer(a, b, factory, gconv_activation, gconv_norm, gconv_dropout)
            for a, b in zip(self.widths[:-1], self.widths[1:])
        ]
        out = self.widths[-1]
        self.node_skip = Linear(embed_dim + out, out, factory.rng) if skip else None
        self.edge_skip = Linear(embed_dim + out, out, factory.rng) if skip and edge_classes else None
        fc = dict(activation=fc_activation, norm=fc_norm, dropout=fc_dropout)
        self.node_head = MLP([out] * classifier_layers + [node_classes], factory, **fc) if node_classes else None
        self.edge_head = MLP([out] * classifier_layers + [edge_classes], factory, **fc) if edge_classes else None

    @property
    def depth(self):
        return len(self.layers)

    def embed(self, gb, node_soft=None, edge_soft=None):
        node_rows, node_probs = node_soft if node_soft is not None else (None, None)
        edge_rows, edge_probs = edge_soft if edge_soft is not None else (None, None)
        nodes = self.obj_embed(gb.node_categories, node_rows, node_probs)
        preds = self.pred_embed(gb.edges[:, 1], edge_rows, edge_probs)
        return nodes, preds

    def forward(self, gb, node_soft=None, edge_soft=None, depth=None):
        """Run the stack on a :class:`GraphBatch`.

        ``node_soft``/``edge_soft`` are ``(rows, probs)`` pairs replacing the
        embedding of those rows by the probability-weighted embedding mix.
        ``depth`` truncates the stack to its first ``depth`` layers.
        """
        v0, r0 = self.embed(gb, node_soft, edge_soft)
        v, r = v0, r0
        layers = self.layers if depth is None else self.layers[:depth]
        for layer in layers:
            v, r = layer(v, r, gb.edges, gb.num_nodes)
        nodes = v
        if self.node_skip is not None and v.shape[1] == self.widths[-1]:
            nodes = self.node_skip(F.concat([v0, v], axis=1))
        edges = r
        if self.edge_skip is not None and r.shape[1] == self.widths[-1]:
            edges = self.edge_skip(F.concat([r0, r], axis=1))
        return GcnOutput(nodes, edges, v0, v, r0, r)

    def node_logits(self, out, rows):
        return self.node_head(F.take_rows(out.nodes, rows))

    def edge_logits(self, out, rows):
        return self.edge_head(F.take_rows(out.edges, rows))


def aggregate_graph(node_feats, edge_feats, gb):
    """Per-graph [mean node feature, mean edge feature]; graphs without edges pool zeros."""
    nodes = F.segment_mean(node_feats, gb.node_graph, gb.num_graphs)
    edges = F.segment_mean(edge_feats, gb.edge_graph, gb.num_graphs)
    return F.concat([nodes, edges], axis=1)
