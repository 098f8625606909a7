"""Scene-graph enricher: object prediction, edge detection, predicate classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import MLP, LayerFactory, Module, RngStream, Tensor, no_grad
from .autodiff import functional as F
from .gcn import GENERATOR_ARCHITECTURES, GcnStack
from .graph import SceneGraph, SceneGraphError, add_dummy_node, batch, require_valid

MASK_VALUE = -1e9


class VocabularyExhaustedError(SceneGraphError):
    """Every real object category is already present under forced-novel decoding."""


def object_mask(vocab, present=()):
    """Additive logit mask hiding the object specials and any ``present`` categories."""
    mask = np.zeros(vocab.num_objects)
    mask[[vocab.unknown_obj, vocab.image]] = MASK_VALUE
    for c in present:
        mask[c] = MASK_VALUE
    return mask


def predicate_mask(vocab, allow_none=True):
    mask = np.zeros(vocab.num_predicates)
    mask[[vocab.unknown_pred, vocab.in_image]] = MASK_VALUE
    if not allow_none:
        mask[vocab.none_pred] = MASK_VALUE
    return mask


def insert_unknown(graph, vocab):
    """Append an unknown_obj node linked by unknown_pred edges to and from every node."""
    require_valid(graph, vocab)
    u = graph.num_nodes
    extra = []
    for i in range(graph.num_nodes):
        extra.append((u, vocab.unknown_pred, i))
        extra.append((i, vocab.unknown_pred, u))
    return SceneGraph(graph.objects + (vocab.unknown_obj,), graph.edges + tuple(extra))


def _unknown_position(graph, vocab):
    positions = [i for i, c in enumerate(graph.objects) if c == vocab.unknown_obj]
    if len(positions) != 1:
        raise SceneGraphError(f"expected exactly one unknown_obj node, found {len(positions)}")
    return positions[0]


@dataclass
class ObjectPass:
    """Object-GCN forward over a batch of graphs that each hold one unknown node."""

    out: object
    gb: object
    logits: object          # (B, K) unmasked logits at the unknown rows
    unknown_rows: np.ndarray
    node_rows: list         # per graph: global rows of the non-dummy nodes
    sizes: list


@dataclass
class EnrichOptions:
    threshold: float = 0.5
    max_edges: int = 8
    steps: int = 1
    forced_novel: bool = False
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.max_edges < 1:
            raise ValueError("max_edges must be at least 1")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass
class EnrichmentStep:
    object_logits: np.ndarray
    obj: int
    edge_scores: np.ndarray           # (n+1, n+1) probabilities, zero diagonal
    selected: list                    # [(subject, object, probability)]
    predicate_logits: np.ndarray      # (len(selected), R)
    predicates: list
    graph: SceneGraph
    new_node: int
    input_graph: SceneGraph = field(repr=False, default=None)


class EnricherModel(Module):
    """Object GCN with a node head, φ_s/φ_o edge MLPs, predicate GCN with an edge head."""

    def __init__(self, vocab, embed_dim=256, architecture="a", *, gconv_activation="leakyrelu",
                 gconv_norm="none", gconv_dropout=0.1, fc_activation="leakyrelu", fc_norm="batch",
                 fc_dropout=0.1, classifier_layers=2, edge_layers=2, seed=0):
        self.vocab = vocab
        self.stream = RngStream(seed)
        factory = LayerFactory(np.random.default_rng(seed), self.stream)
        common = dict(gconv_activation=gconv_activation, gconv_norm=gconv_norm, gconv_dropout=gconv_dropout,
                      fc_activation=fc_activation, fc_norm=fc_norm, fc_dropout=fc_dropout,
                      classifier_layers=classifier_layers, presets=GENERATOR_ARCHITECTURES)
        self.obj_gcn = GcnStack(vocab.num_objects, vocab.num_predicates, embed_dim, architecture, factory,
                                node_classes=vocab.num_objects, **common)
        out = self.obj_gcn.widths[-1]
        widths = [embed_dim + out] + [out] * edge_layers
        fc = dict(activation=fc_activation, norm=fc_norm, dropout=fc_dropout)
        self.phi_s = MLP(widths, factory, **fc)
        self.phi_o = MLP(widths, factory, **fc)
        self.pred_gcn = GcnStack(vocab.num_objects, vocab.num_predicates, embed_dim, architecture, factory,
                                 edge_classes=vocab.num_predicates, **common)

    # -- batched building blocks --------------------------------------------

    def object_pass(self, graphs, unknown_positions):
        """Run the object GCN on ``graphs`` (no dummy yet) with unknowns at ``unknown_positions``."""
        gb = batch([add_dummy_node(g, self.vocab) for g in graphs])
        out = self.obj_gcn(gb)
        starts = gb.node_offsets[:-1]
        unknown_rows = starts + np.asarray(unknown_positions, dtype=np.int64)
        logits = self.obj_gcn.node_logits(out, unknown_rows)
        sizes = [g.num_nodes for g in graphs]
        node_rows = [np.arange(s, s + n) for s, n in zip(starts, sizes)]
        return ObjectPass(out, gb, logits, unknown_rows, node_rows, sizes)

    def edge_logits(self, op, unknown_embedding):
        """Dot-product edge logits over the stacked non-dummy rows of every graph.

        ``unknown_embedding`` (B, D) replaces the unknown rows of V_O^(0) by the
        embedding of the chosen enriching category.  Returns the (N, N) logit
        tensor and each graph's row offset into it.
        """
        rows = np.concatenate(op.node_rows)
        v0 = F.scatter_rows(op.out.nodes_first, op.unknown_rows, unknown_embedding)
        x = F.concat([F.take_rows(v0, rows), F.take_rows(op.out.nodes_last, rows)], axis=1)
        s, o = self.phi_s(x), self.phi_o(x)
        offsets = np.concatenate([[0], np.cumsum(op.sizes)])
        return F.matmul(s, F.transpose(o)), offsets

    def embed_objects(self, categories=None, probs=None):
        w = self.obj_gcn.obj_embed.weight
        if probs is not None:
            return F.matmul(probs, w)
        return F.take_rows(w, np.asarray(categories, dtype=np.int64))

    def predicate_pass(self, graphs, placeholder_ids):
        """Predicate logits (unmasked) at each graph's placeholder edge indices, stacked."""
        gb = batch([add_dummy_node(g, self.vocab) for g in graphs])
        out = self.pred_gcn(gb)
        rows = np.concatenate([gb.edge_offsets[k] + np.asarray(ids, dtype=np.int64)
                               for k, ids in enumerate(placeholder_ids)])
        return self.pred_gcn.edge_logits(out, rows)


# -- single-graph operations -----------------------------------------------------

def predict_object(model, graph, present_mask=()):
    """Masked object logits at the unknown node plus V_O^(0) and V_O^(L) rows of the graph."""
    u = _unknown_position(graph, model.vocab)
    op = model.object_pass([graph], [u])
    logits = op.logits.data[0] + object_mask(model.vocab, present_mask)
    rows = op.node_rows[0]
    return logits, op.out.nodes_first.data[rows], op.out.nodes_last.data[rows], op


def score_edges(model, v0, v_hat, vl, unknown):
    """M̂ from V_O^(0) rows (unknown row replaced by ``v_hat``) and V_O^(L) rows."""
    v0 = np.array(v0, copy=True)
    if v0.shape[0] != vl.shape[0] or v0.shape[1] + vl.shape[1] != model.phi_s.linears[0].d_in:
        raise ValueError(f"feature widths {v0.shape} / {vl.shape} do not fit the edge MLPs")
    v0[unknown] = v_hat
    x = Tensor(np.concatenate([v0, vl], axis=1))
    logits = F.matmul(model.phi_s(x), F.transpose(model.phi_o(x))).data
    probs = F.sigmoid(Tensor(logits)).data
    np.fill_diagonal(probs, 0.0)
    return probs


def select_edges(scores, unknown, threshold=0.5, max_edges=8):
    """Directed placeholders touching ``unknown``: above-threshold pairs, best first.

    Falls back to the single best pair when nothing clears ``threshold`` so
    the new node always ends up connected.
    """
    n = scores.shape[0]
    candidates = []
    for j in range(n):
        if j == unknown:
            continue
        candidates.append((unknown, j, float(scores[unknown, j])))
        candidates.append((j, unknown, float(scores[j, unknown])))
    if not candidates:
        return []
    order = sorted(range(len(candidates)), key=lambda k: (-candidates[k][2], k))
    kept = [candidates[k] for k in order if candidates[k][2] > threshold][:max_edges]
    return kept or [candidates[order[0]]]


def predict_predicates(model, graph, placeholder_ids, allow_none=False):
    if not len(placeholder_ids):
        raise SceneGraphError("no placeholder edges to classify")
    logits = model.predicate_pass([graph], [placeholder_ids]).data
    return logits + predicate_mask(model.vocab, allow_none)


def _choose(logits, temperature, rng):
    if temperature == 0:
        return int(np.argmax(logits))
    z = (logits - logits.max()) / temperature
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def enrich_once(model, graph, options=None, present=None, rng=None):
    """Add one predicted object with its edges and predicates to ``graph``."""
    options = options or EnrichOptions()
    vocab = model.vocab
    require_valid(graph, vocab)
    rng = rng or np.random.default_rng(options.seed)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            g_unknown = insert_unknown(graph, vocab)
            u = graph.num_nodes
            if options.forced_novel:
                present = set(graph.objects) if present is None else set(present)
                if all(c in present for c in vocab.real_objects):
                    raise VocabularyExhaustedError("every object category is already present")
            logits, v0, vl, _ = predict_object(model, g_unknown, present if options.forced_novel else ())
            obj = _choose(logits, options.temperature, rng)
            v_hat = model.embed_objects([obj]).data[0]
            scores = score_edges(model, v0, v_hat, vl, u)
            selected = select_edges(scores, u, options.threshold, options.max_edges)
            base = SceneGraph(graph.objects + (obj,), graph.edges)
            placeholders = [(s, vocab.unknown_pred, o) for s, o, _ in selected]
            tilde = SceneGraph(base.objects, base.edges + tuple(placeholders))
            ids = list(range(base.num_edges, tilde.num_edges))
            pred_logits = predict_predicates(model, tilde, ids, allow_none=False)
            preds = [int(np.argmax(row)) for row in pred_logits]
            enriched = SceneGraph(base.objects, base.edges + tuple((s, p, o) for (s, o, _), p in zip(selected, preds)))
    finally:
        model.train(was_training)
    require_valid(enriched, vocab)
    return EnrichmentStep(logits, obj, scores, selected, pred_logits, preds, enriched, u, graph)


def enrich_iterative(model, graph, steps=None, options=None):
    """Feed each enriched graph back in; returns one :class:`EnrichmentStep` per iteration."""
    options = options or EnrichOptions()
    steps = options.steps if steps is None else steps
    if steps < 1:
        raise ValueError("steps must be at least 1")
    rng = np.random.default_rng(options.seed)
    out = []
    current = graph
    present = set(graph.objects)
    for _ in range(steps):
        step = enrich_once(model, current, options, present=present, rng=rng)
        out.append(step)
        present.add(step.obj)
        current = step.graph
    return out
