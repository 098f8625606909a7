"""Corpus supply: Visual Genome ingestion and a synthetic scene grammar."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .graph import (OBJECT_SPECIALS, PREDICATE_SPECIALS, SceneGraph, SceneGraphError, Vocabulary,
                    from_document, to_document, validate)

log = logging.getLogger(__name__)

# 62.5k / 5.5k / 5k retained train / val / test images
VG_SPLIT_FRACTIONS = (62.5 / 73.0, 5.5 / 73.0, 5.0 / 73.0)
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class CorpusConfig:
    source: str = "synthetic"
    min_object_occurrences: int = 2000
    min_predicate_occurrences: int = 500
    split_fractions: tuple = VG_SPLIT_FRACTIONS
    max_nodes: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("vg", "synthetic"):
            raise ValueError(f"source must be 'vg' or 'synthetic', got {self.source!r}")
        if self.min_object_occurrences < 0 or self.min_predicate_occurrences < 0:
            raise ValueError("occurrence thresholds must be non-negative")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three values summing to 1, got {self.split_fractions}")
        if self.max_nodes is not None and self.max_nodes < 2:
            raise ValueError("max_nodes must be at least 2")


# -- synthetic scene grammar -------------------------------------------------

@dataclass(frozen=True)
class Attachment:
    """Add ``child`` linked to an existing ``parent`` node.

    The edge runs child -> parent unless ``parent_is_subject``.
    """

    child: str
    parent: str
    predicate: str
    weight: float = 1.0
    parent_is_subject: bool = False


@dataclass(frozen=True)
class Template:
    name: str
    anchor: str
    categories: tuple
    attachments: tuple
    unique: frozenset = frozenset()
    # (subject category, predicate, object category) added for every present pair
    cross: tuple = ()


@dataclass
class SceneGrammar:
    templates: tuple
    min_nodes: int = 3
    max_nodes: int = 8
    predicates: tuple = field(default=())

    def __post_init__(self):
        pools = [set(t.categories) for t in self.templates]
        for i in range(len(pools)):
            for j in range(i + 1, len(pools)):
                if pools[i] & pools[j]:
                    raise ValueError("template category pools must be disjoint")
        if not 2 <= self.min_nodes <= self.max_nodes:
            raise ValueError("need 2 <= min_nodes <= max_nodes")
        used = []
        for t in self.templates:
            for a in t.attachments:
                used.append(a.predicate)
            for _, p, _ in t.cross:
                used.append(p)
        if not self.predicates:
            self.predicates = tuple(dict.fromkeys(used))

    @property
    def object_names(self):
        return tuple(c for t in self.templates for c in t.categories)

    def vocabulary(self):
        return Vocabulary.build(self.object_names, self.predicates)

    def template(self, name):
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(f"unknown template {name!r}")


def default_grammar():
    """Four scene templates, 20 object categories, 10 predicates, 3-8 nodes."""
    street = Template(
        "street", "road", ("road", "sidewalk", "car", "sign", "building"),
        (Attachment("sidewalk", "road", "next to", 2.0),
         Attachment("car", "road", "on", 2.0),
         Attachment("sign", "sidewalk", "on", 1.0),
         Attachment("building", "sidewalk", "behind", 1.0)),
        unique=frozenset({"road", "sidewalk"}),
        cross=(("car", "in front of", "building"),),
    )
    room = Template(
        "room", "floor", ("floor", "table", "chair", "lamp", "rug"),
        (Attachment("table", "floor", "on", 3.0),
         Attachment("rug", "table", "under", 1.0),
         Attachment("chair", "table", "beside", 2.0),
         Attachment("lamp", "table", "on", 1.0)),
        unique=frozenset({"floor", "table", "rug"}),
    )
    field_ = Template(
        "field", "grass", ("grass", "cow", "tree", "fence", "sky"),
        (Attachment("fence", "grass", "in", 1.5),
         Attachment("cow", "grass", "on", 2.0),
         Attachment("tree", "fence", "near", 1.0),
         Attachment("sky", "grass", "above", 1.0)),
        unique=frozenset({"grass", "fence", "sky"}),
    )
    kitchen = Template(
        "kitchen", "counter", ("counter", "plate", "bowl", "glass", "food"),
        (Attachment("plate", "counter", "on", 3.0),
         Attachment("bowl", "plate", "next to", 1.5),
         Attachment("glass", "plate", "near", 1.0),
         Attachment("food", "plate", "has", 1.0, parent_is_subject=True)),
        unique=frozenset({"counter", "plate"}),
    )
    return SceneGrammar((street, room, field_, kitchen))


TEMPLATE_SETS = {"default": default_grammar}


def _generate_one(template, grammar, vocab, rng):
    target = int(rng.integers(grammar.min_nodes, grammar.max_nodes + 1))
    labels = [template.anchor]
    edges = []
    while len(labels) < target:
        present = Counter(labels)
        options = [a for a in template.attachments
                   if present[a.parent] and not (a.child in template.unique and present[a.child])]
        if not options:
            break
        weights = np.array([a.weight for a in options])
        rule = options[int(rng.choice(len(options), p=weights / weights.sum()))]
        parents = [i for i, c in enumerate(labels) if c == rule.parent]
        parent = parents[int(rng.integers(len(parents)))]
        labels.append(rule.child)
        child = len(labels) - 1
        edges.append((parent, rule.predicate, child) if rule.parent_is_subject else (child, rule.predicate, parent))
    for subj_cat, pred, obj_cat in template.cross:
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                if i != j and a == subj_cat and b == obj_cat:
                    edges.append((i, pred, j))
    perm = rng.permutation(len(labels))
    position = {int(old): new for new, old in enumerate(perm)}
    objects = [vocab.object_index(labels[int(old)]) for old in perm]
    triplets = sorted((position[s], vocab.predicate_index(p), position[o]) for s, p, o in edges)
    return SceneGraph(objects, triplets)


def generate_synthetic(grammar, count, seed, with_templates=False):
    """``count`` graphs drawn template-uniformly; identical for identical seeds."""
    if count < 1:
        raise ValueError("count must be at least 1")
    vocab = grammar.vocabulary()
    rng = np.random.default_rng(seed)
    graphs, names = [], []
    for _ in range(count):
        template = grammar.templates[int(rng.integers(len(grammar.templates)))]
        graphs.append(_generate_one(template, grammar, vocab, rng))
        names.append(template.name)
    return (graphs, names) if with_templates else graphs


def synthetic_corpus(grammar, train, val, test=0, seed=0):
    """Graphs plus contiguous train/val/test index lists (the graphs are i.i.d.)."""
    graphs = generate_synthetic(grammar, train + val + test, seed)
    return graphs, {"train": list(range(train)), "val": list(range(train, train + val)),
                    "test": list(range(train + val, train + val + test))}


def split_indices(count, fractions, seed):
    """Seeded random partition of ``range(count)`` into train/val/test index lists."""
    perm = np.random.default_rng(seed).permutation(count)
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    return {"train": sorted(perm[:n_train].tolist()),
            "val": sorted(perm[n_train:n_train + n_val].tolist()),
            "test": sorted(perm[n_train + n_val:].tolist())}


# -- Visual Genome ingestion -----------------------------------------------------

def _clean(label):
    return " ".join(str(label).strip().lower().split())


def _object_label(record):
    names = record.get("names")
    if isinstance(names, list) and names:
        return _clean(names[0])
    if record.get("name"):
        return _clean(record["name"])
    return None


def hash_split(image_id, fractions, seed):
    digest = hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).digest()
    u = int.from_bytes(digest[:8], "big") / 2.0 ** 64
    edge = 0.0
    for name, frac in zip(SPLIT_NAMES, fractions):
        edge += frac
        if u < edge:
            return name
    return SPLIT_NAMES[-1]


@dataclass
class IngestReport:
    images: int = 0
    kept_graphs: int = 0
    skipped: Counter = field(default_factory=Counter)
    image_ids: list = field(default_factory=list)


def ingest_vg(objects_records, relationship_records, config):
    """Filter VG records into ``(vocabulary, graphs, splits, report)``.

    ``objects_records``/``relationship_records`` are the parsed per-image
    arrays of ``objects.json`` and ``relationships.json``.  ``splits`` gives
    each graph's split name, chosen by a seeded hash of its image id; the
    report's ``image_ids`` runs parallel to ``graphs``.
    """
    report = IngestReport()
    objects_by_image = {}
    for rec in objects_records:
        if not isinstance(rec, dict) or "image_id" not in rec or not isinstance(rec.get("objects"), list):
            report.skipped["malformed_object_record"] += 1
            continue
        objs = {}
        for o in rec["objects"]:
            label = _object_label(o) if isinstance(o, dict) else None
            if label is None or "object_id" not in o:
                report.skipped["malformed_object"] += 1
                continue
            objs[o["object_id"]] = label
        objects_by_image[rec["image_id"]] = objs

    rels_by_image = {}
    for rec in relationship_records:
        if not isinstance(rec, dict) or "image_id" not in rec or not isinstance(rec.get("relationships"), list):
            report.skipped["malformed_relationship_record"] += 1
            continue
        objs = objects_by_image.get(rec["image_id"])
        if objs is None:
            report.skipped["relationships_without_objects"] += 1
            continue
        rels = []
        for r in rec["relationships"]:
            try:
                sid, oid, pred = r["subject"]["object_id"], r["object"]["object_id"], _clean(r["predicate"])
            except (KeyError, TypeError):
                report.skipped["malformed_relationship"] += 1
                continue
            if sid not in objs or oid not in objs:
                report.skipped["dangling_object_id"] += 1
                continue
            if not pred:
                report.skipped["malformed_relationship"] += 1
                continue
            rels.append((sid, pred, oid))
        rels_by_image[rec["image_id"]] = rels

    obj_counts = Counter(label for objs in objects_by_image.values() for label in objs.values())
    pred_counts = Counter(p for rels in rels_by_image.values() for _, p, _ in rels)
    specials = set(OBJECT_SPECIALS) | set(PREDICATE_SPECIALS)
    kept_objects = sorted(l for l, c in obj_counts.items() if c >= config.min_object_occurrences and l not in specials)
    kept_preds = sorted(p for p, c in pred_counts.items() if c >= config.min_predicate_occurrences and p not in specials)
    if not kept_objects or not kept_preds:
        raise SceneGraphError("ingestion kept no object or no predicate categories")
    vocab = Vocabulary.build(kept_objects, kept_preds)
    obj_set, pred_set = set(kept_objects), set(kept_preds)

    graphs, splits, image_ids = [], [], []
    for image_id in sorted(objects_by_image, key=lambda x: (str(type(x)), x)):
        report.images += 1
        objs = objects_by_image[image_id]
        ids = [oid for oid in objs if objs[oid] in obj_set]
        position = {oid: i for i, oid in enumerate(ids)}
        triplets = []
        seen = set()
        for sid, pred, oid in rels_by_image.get(image_id, []):
            if sid not in position or oid not in position or pred not in pred_set:
                continue
            t = (position[sid], vocab.predicate_index(pred), position[oid])
            if t[0] == t[2]:
                report.skipped["self_loop"] += 1
                continue
            if t in seen:
                continue
            seen.add(t)
            triplets.append(t)
        if len(ids) < 2:
            report.skipped["too_few_objects"] += 1
            continue
        if config.max_nodes is not None and len(ids) > config.max_nodes:
            report.skipped["too_many_objects"] += 1
            continue
        graphs.append(SceneGraph([vocab.object_index(objs[oid]) for oid in ids], triplets))
        splits.append(hash_split(image_id, config.split_fractions, config.seed))
        image_ids.append(image_id)
    if not graphs:
        raise SceneGraphError("ingestion produced no graphs")
    report.kept_graphs = len(graphs)
    report.image_ids = image_ids
    for reason, n in sorted(report.skipped.items()):
        log.info("skipped %d (%s)", n, reason)
    return vocab, graphs, splits, report


# -- statistics and files -----------------------------------------------------------

def corpus_stats(graphs, vocab=None):
    if not graphs:
        return {"graphs": 0, "nodes": {}, "edges": {}, "objects": {}, "predicates": {}}
    obj = Counter(c for g in graphs for c in g.objects)
    pred = Counter(p for g in graphs for _, p, _ in g.edges)
    name_o = (lambda i: vocab.object_names[i]) if vocab else (lambda i: i)
    name_p = (lambda i: vocab.predicate_names[i]) if vocab else (lambda i: i)
    return {
        "graphs": len(graphs),
        "nodes": dict(sorted(Counter(g.num_nodes for g in graphs).items())),
        "edges": dict(sorted(Counter(g.num_edges for g in graphs).items())),
        "objects": {name_o(k): v for k, v in sorted(obj.items())},
        "predicates": {name_p(k): v for k, v in sorted(pred.items())},
    }


def write_corpus(directory, vocab, graphs, splits, manifest=None):
    """``graphs.jsonl`` (one graph per line), ``vocabulary.json``, ``splits.json``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "graphs.jsonl"), "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(to_document(g, vocab), ensure_ascii=False) + "\n")
    with open(os.path.join(directory, "vocabulary.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(vocab.to_dict(), indent=1, sort_keys=True) + "\n")
    with open(os.path.join(directory, "splits.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(dict(splits, **(manifest or {})), sort_keys=True) + "\n")


def read_corpus(directory):
    """Return ``(vocab, graphs, splits)`` where splits maps names to index lists."""
    with open(os.path.join(directory, "vocabulary.json"), encoding="utf-8") as fh:
        vocab = Vocabulary.from_json(fh.read())
    graphs = []
    with open(os.path.join(directory, "graphs.jsonl"), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                g = from_document(json.loads(line), vocab)
            except (json.JSONDecodeError, SceneGraphError) as exc:
                raise SceneGraphError(f"graphs.jsonl line {lineno}: {exc}") from None
            errors = validate(g, vocab)
            if errors:
                raise SceneGraphError(f"graphs.jsonl line {lineno}: {'; '.join(errors)}")
            graphs.append(g)
    with open(os.path.join(directory, "splits.json"), encoding="utf-8") as fh:
        splits = {k: v for k, v in json.load(fh).items() if k in SPLIT_NAMES}
    return vocab, graphs, splits


def corpus_digest(directory):
    h = hashlib.sha256()
    for name in ("vocabulary.json", "graphs.jsonl", "splits.json"):
        with open(os.path.join(directory, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()
