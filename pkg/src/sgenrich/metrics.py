"""Enrichment accuracy metrics, the batched evaluator and a nested-loop reference."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import functional as F
from .autodiff import no_grad
from .enricher import object_mask, predicate_mask, select_edges
from .graph import SceneGraph

METRICS = ("objs_acc", "avail_preds_acc", "not_avail_preds_acc", "avail_edges_acc", "not_avail_edges_acc",
           "scene_class_acc")
ROW_NAMES = {
    "objs_acc": "Objs Acc",
    "avail_preds_acc": "Avail Preds Acc",
    "not_avail_preds_acc": "Not Avail Preds Acc",
    "avail_edges_acc": "Avail Edges Acc",
    "not_avail_edges_acc": "Not Avail Edges Acc",
    "scene_class_acc": "Scene Class Acc",
}


@dataclass
class PredictionRecord:
    """Raw predictions for one held-out elimination.

    ``selected`` lists the chosen ``(subject, object)`` placeholders,
    ``predicates`` their predicted categories and ``gt_predicates`` the set
    of GT predicates on that ordered pair (empty when the pair has no GT
    edge).  ``scene`` is ``(argmax class of I, argmax class of Î)``.
    """

    object_pred: int
    object_target: int
    edge_probs: np.ndarray
    gt_adjacency: np.ndarray
    selected: list = field(default_factory=list)
    predicates: list = field(default_factory=list)
    gt_predicates: list = field(default_factory=list)
    scene: tuple | None = None


@dataclass
class MetricReport:
    values: dict
    support: dict
    characterizer: str | None = None

    def __getattr__(self, name):
        if name in METRICS:
            return self.values.get(name)
        raise AttributeError(name)

    def metric_sum(self, include_scene=False):
        keys = ["objs_acc", "avail_preds_acc", "avail_edges_acc", "not_avail_edges_acc"]
        if include_scene:
            keys.append("scene_class_acc")
        return float(sum(self.values.get(k) or 0.0 for k in keys))

    def to_dict(self):
        doc = {"metrics": {k: self.values[k] for k in METRICS if k in self.values},
               "support": {k: self.support.get(k, 0) for k in METRICS}}
        if self.characterizer:
            doc["characterizer"] = self.characterizer
        return doc

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        lines = [f"{'Metric':<22}{'Acc (%)':>10}{'Support':>10}"]
        for k in METRICS:
            value = self.values.get(k)
            shown = "-" if value is None else f"{100 * value:.2f}"
            lines.append(f"{ROW_NAMES[k]:<22}{shown:>10}{self.support.get(k, 0):>10}")
        if self.characterizer:
            lines.append(f"(scene classes from {self.characterizer})")
        return "\n".join(lines)

    def __eq__(self, other):
        return isinstance(other, MetricReport) and self.values == other.values and self.support == other.support


def _report(counts, characterizer=None):
    values, support = {}, {}
    for name in METRICS:
        hit, total = counts.get(name, (0, 0))
        support[name] = int(total)
        if total:
            values[name] = hit / total
    return MetricReport(values, support, characterizer if "scene_class_acc" in values else None)


def compute_metrics(records, threshold=0.5, none_pred=1, characterizer=None):
    """Pool every metric over all records (vectorised)."""
    counts = {}
    if not records:
        return _report(counts)
    obj_pred = np.array([r.object_pred for r in records])
    obj_gt = np.array([r.object_target for r in records])
    counts["objs_acc"] = (int((obj_pred == obj_gt).sum()), len(records))

    probs = np.concatenate([r.edge_probs.ravel() for r in records])
    gt = np.concatenate([r.gt_adjacency.ravel() for r in records]).astype(bool)
    off = np.concatenate([~np.eye(r.gt_adjacency.shape[0], dtype=bool).ravel() for r in records])
    pos = gt & off
    neg = ~gt & off
    hit = probs > threshold
    counts["avail_edges_acc"] = (int((hit & pos).sum()), int(pos.sum()))
    counts["not_avail_edges_acc"] = (int((~hit & neg).sum()), int(neg.sum()))

    matched_ok = matched = unmatched_none = unmatched = 0
    for r in records:
        preds = np.asarray(r.predicates, dtype=np.int64)
        has_gt = np.array([len(s) > 0 for s in r.gt_predicates], dtype=bool)
        ok = np.array([p in s for p, s in zip(r.predicates, r.gt_predicates)], dtype=bool)
        matched += int(has_gt.sum())
        matched_ok += int(ok.sum())
        unmatched += int((~has_gt).sum())
        unmatched_none += int(((preds == none_pred) & ~has_gt).sum()) if len(preds) else 0
    counts["avail_preds_acc"] = (matched_ok, matched)
    counts["not_avail_preds_acc"] = (unmatched_none, unmatched)

    scenes = np.array([r.scene for r in records if r.scene is not None]).reshape(-1, 2)
    counts["scene_class_acc"] = (int((scenes[:, 0] == scenes[:, 1]).sum()), len(scenes))
    return _report(counts, characterizer)


def oracle_evaluate(records, threshold=0.5, none_pred=1, characterizer=None):
    """Reference implementation: explicit loops over every record, pair and edge."""
    tallies = {name: [0, 0] for name in METRICS}
    for r in records:
        tallies["objs_acc"][1] += 1
        if r.object_pred == r.object_target:
            tallies["objs_acc"][0] += 1
        n = len(r.gt_adjacency)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                predicted = r.edge_probs[i][j] > threshold
                if r.gt_adjacency[i][j]:
                    tallies["avail_edges_acc"][1] += 1
                    tallies["avail_edges_acc"][0] += 1 if predicted else 0
                else:
                    tallies["not_avail_edges_acc"][1] += 1
                    tallies["not_avail_edges_acc"][0] += 0 if predicted else 1
        for k in range(len(r.selected)):
            if r.gt_predicates[k]:
                tallies["avail_preds_acc"][1] += 1
                if r.predicates[k] in r.gt_predicates[k]:
                    tallies["avail_preds_acc"][0] += 1
            else:
                tallies["not_avail_preds_acc"][1] += 1
                if r.predicates[k] == none_pred:
                    tallies["not_avail_preds_acc"][0] += 1
        if r.scene is not None:
            tallies["scene_class_acc"][1] += 1
            if r.scene[0] == r.scene[1]:
                tallies["scene_class_acc"][0] += 1
    return _report({k: tuple(v) for k, v in tallies.items()}, characterizer)


# -- running the model -----------------------------------------------------------------

def _probs(logits):
    return F.sigmoid(logits).data


def base_graph(example, category):
    """GT graph without the eliminated node's edges, that node set to ``category``."""
    pos = example.position
    objects = list(example.gt_graph.objects)
    objects[pos] = category
    edges = [e for e in example.gt_graph.edges if pos not in (e[0], e[2])]
    return SceneGraph(objects, edges)


def predict_records(model, examples, surrogates=None, threshold=0.5, max_edges=8, teacher_forcing=True,
                    batch_size=64):
    """Run the enricher on ``examples`` in eval mode and collect :class:`PredictionRecord` s."""
    vocab = model.vocab
    was_training = model.training
    model.eval()
    records = []
    try:
        with no_grad():
            for lo in range(0, len(examples), batch_size):
                records.extend(_predict_chunk(model, examples[lo:lo + batch_size], surrogates, threshold,
                                              max_edges, teacher_forcing, vocab))
    finally:
        model.train(was_training)
    return records


def _edges_and_predicates(model, op, chunk, categories, threshold, max_edges, allow_none, vocab):
    logits, offsets = model.edge_logits(op, model.embed_objects(categories))
    probs = _probs(logits)
    per_graph, tilde, ids = [], [], []
    for k, ex in enumerate(chunk):
        lo, hi = offsets[k], offsets[k + 1]
        m = probs[lo:hi, lo:hi].copy()
        np.fill_diagonal(m, 0.0)
        selected = [(s, o) for s, o, _ in select_edges(m, ex.position, threshold, max_edges)]
        base = base_graph(ex, categories[k])
        tilde.append(SceneGraph(base.objects, base.edges + tuple((s, vocab.unknown_pred, o) for s, o in selected)))
        ids.append(list(range(base.num_edges, base.num_edges + len(selected))))
        per_graph.append((m, selected))
    pred_logits = model.predicate_pass(tilde, ids).data + predicate_mask(vocab, allow_none)
    chosen = np.argmax(pred_logits, axis=1)
    out, cursor = [], 0
    for m, selected in per_graph:
        out.append((m, selected, [int(c) for c in chosen[cursor:cursor + len(selected)]]))
        cursor += len(selected)
    return out


def _predict_chunk(model, chunk, surrogates, threshold, max_edges, teacher_forcing, vocab):
    op = model.object_pass([ex.masked_graph for ex in chunk], [ex.position for ex in chunk])
    obj_logits = op.logits.data + object_mask(vocab)
    predicted = [int(c) for c in np.argmax(obj_logits, axis=1)]
    targets = [ex.category for ex in chunk]
    conditioned = targets if teacher_forcing else predicted
    main = _edges_and_predicates(model, op, chunk, conditioned, threshold, max_edges, True, vocab)

    scenes = [None] * len(chunk)
    if surrogates is not None:
        full = main if not teacher_forcing else _edges_and_predicates(
            model, op, chunk, predicted, threshold, max_edges, False, vocab)
        enriched = []
        for k, ex in enumerate(chunk):
            base = base_graph(ex, predicted[k])
            _, selected, preds = full[k]
            edges = base.edges + tuple((s, p, o) for (s, o), p in zip(selected, preds) if p != vocab.none_pred)
            enriched.append(SceneGraph(base.objects, edges))
        real = surrogates.characterizer(surrogates.synth([ex.gt_graph for ex in chunk])).logits.data
        fake = surrogates.characterizer(surrogates.synth(enriched)).logits.data
        scenes = list(zip(np.argmax(real, axis=1).tolist(), np.argmax(fake, axis=1).tolist()))

    records = []
    for k, ex in enumerate(chunk):
        m, selected, preds = main[k]
        gt_sets = [ex.pair_predicates.get((s, o), frozenset()) for s, o in selected]
        records.append(PredictionRecord(predicted[k], targets[k], m, ex.gt_adjacency, selected, preds,
                                        gt_sets, scenes[k]))
    return records


def evaluate(model, examples, surrogates=None, threshold=0.5, max_edges=8, teacher_forcing=True,
             batch_size=64):
    records = predict_records(model, examples, surrogates, threshold, max_edges, teacher_forcing, batch_size)
    name = getattr(surrogates, "name", None) if surrogates is not None else None
    return compute_metrics(records, threshold, model.vocab.none_pred, name)
