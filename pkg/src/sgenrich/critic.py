"""Scene-graph critic: a global and a local GCN discriminator fused into one logit."""
from __future__ import annotations

import numpy as np

from .autodiff import MLP, LayerFactory, Module, RngStream
from .autodiff import functional as F
from .gcn import DISCRIMINATOR_ARCHITECTURES, GcnStack, aggregate_graph, parse_architecture
from .graph import SceneGraphError, add_dummy_node, batch, induced_subgraph, neighbors

SOFT_TOLERANCE = 1e-5


def local_subgraph(graph, enriching):
    """Induced subgraph on the enriching nodes and their 1-hop neighbours.

    Returns ``(subgraph, node_map, edge_ids)`` as :func:`induced_subgraph` does.
    """
    enriching = set(int(i) for i in enriching)
    if not enriching:
        raise SceneGraphError("local_subgraph needs at least one enriching node")
    if any(not 0 <= i < graph.num_nodes for i in enriching):
        raise SceneGraphError("enriching node position out of range")
    return induced_subgraph(graph, enriching | neighbors(graph, enriching))


def _check_distribution(probs, what):
    if probs is None:
        return
    sums = probs.data.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > SOFT_TOLERANCE) or np.any(probs.data < -SOFT_TOLERANCE):
        raise ValueError(f"soft {what} distributions must be non-negative and sum to 1")


class CriticModel(Module):
    def __init__(self, vocab, embed_dim=16, architecture="b", *, gconv_activation="leakyrelu",
                 gconv_norm="none", gconv_dropout=0.1, fc_activation="leakyrelu", fc_norm="batch",
                 fc_dropout=0.1, seed=1):
        multipliers = parse_architecture(architecture, DISCRIMINATOR_ARCHITECTURES)
        if len(multipliers) < 4:
            raise ValueError("critic architecture needs at least three GConv layers")
        self.vocab = vocab
        self.stream = RngStream(seed)
        factory = LayerFactory(np.random.default_rng(seed), self.stream)
        common = dict(gconv_activation=gconv_activation, gconv_norm=gconv_norm, gconv_dropout=gconv_dropout,
                      skip=False)
        self.global_gcn = GcnStack(vocab.num_objects, vocab.num_predicates, embed_dim, multipliers, factory, **common)
        self.local_gcn = GcnStack(vocab.num_objects, vocab.num_predicates, embed_dim, multipliers[:-2], factory,
                                  **common)
        self.global_width = 2 * self.global_gcn.widths[-1]
        self.local_width = 2 * self.local_gcn.widths[-1]
        d = self.global_width + self.local_width
        self.fusion = MLP([d, 2 * d, 1], factory, activation=fc_activation, norm=fc_norm, dropout=fc_dropout)

    def branch_rows(self):
        """Rows of the fusion input weight fed by the global and local branches."""
        return slice(0, self.global_width), slice(self.global_width, self.global_width + self.local_width)

    @staticmethod
    def _soft(gb, pairs, probs, offsets):
        if pairs is None or not len(pairs):
            return None
        rows = np.array([offsets[k] + i for k, i in pairs], dtype=np.int64)
        return rows, probs

    def _pool(self, stack, graphs, node_soft, edge_soft):
        gb = batch([add_dummy_node(g, self.vocab) for g in graphs])
        ns = self._soft(gb, *(node_soft or (None, None)), gb.node_offsets)
        es = self._soft(gb, *(edge_soft or (None, None)), gb.edge_offsets)
        out = stack(gb, node_soft=ns, edge_soft=es)
        return aggregate_graph(out.nodes, out.edges, gb)

    def forward(self, graphs, enriching=None, node_soft=None, edge_soft=None, rng=None):
        """One realness logit per graph, shape (B,).

        ``enriching[k]`` lists the enriching node positions of graph ``k``
        (``None`` for real graphs, whose local branch sees a random node's
        neighbourhood).  ``node_soft``/``edge_soft`` are ``(pairs, probs)``
        with ``pairs`` a list of ``(graph, node-or-edge index)`` and
        ``probs`` the matching rows of category distributions.
        """
        if node_soft is not None:
            _check_distribution(node_soft[1], "node")
        if edge_soft is not None:
            _check_distribution(edge_soft[1], "edge")
        enriching = list(enriching) if enriching is not None else [None] * len(graphs)
        rng = rng if rng is not None else np.random.default_rng(0)
        pooled_global = self._pool(self.global_gcn, graphs, node_soft, edge_soft)

        subs, n_pairs, n_keep, e_pairs, e_keep = [], [], [], [], []
        node_index = {p: i for i, p in enumerate(node_soft[0])} if node_soft is not None else {}
        edge_index = {p: i for i, p in enumerate(edge_soft[0])} if edge_soft is not None else {}
        for k, g in enumerate(graphs):
            centre = enriching[k] if enriching[k] else [int(rng.integers(g.num_nodes))]
            sub, node_map, edge_ids = local_subgraph(g, centre)
            subs.append(sub)
            for old, new in node_map.items():
                if (k, old) in node_index:
                    n_pairs.append((k, new))
                    n_keep.append(node_index[(k, old)])
            for new, old in enumerate(edge_ids):
                if (k, old) in edge_index:
                    e_pairs.append((k, new))
                    e_keep.append(edge_index[(k, old)])
        local_ns = (n_pairs, F.take_rows(node_soft[1], n_keep)) if n_pairs else None
        local_es = (e_pairs, F.take_rows(edge_soft[1], e_keep)) if e_pairs else None
        pooled_local = self._pool(self.local_gcn, subs, local_ns, local_es)
        logits = self.fusion(F.concat([pooled_global, pooled_local], axis=1))
        return F.reshape(logits, (len(graphs),))


def score(critic, graph, enriching=None, rng=None):
    """Scalar realness logit of a single graph."""
    return float(critic([graph], [enriching] if enriching else None, rng=rng).data[0])
