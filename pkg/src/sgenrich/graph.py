"""Scene-graph data model: vocabulary, graphs, batching and renderers."""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

UNKNOWN_OBJ = "unknown_obj"
IMAGE = "image"
UNKNOWN_PRED = "unknown_pred"
NONE_PRED = "none_pred"
IN_IMAGE = "in_image"

OBJECT_SPECIALS = (UNKNOWN_OBJ, IMAGE)
PREDICATE_SPECIALS = (UNKNOWN_PRED, NONE_PRED, IN_IMAGE)
SCHEMA_VERSION = 1


class SceneGraphError(ValueError):
    """Invalid graph structure or document."""


class UnknownCategoryError(SceneGraphError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    object_names: tuple
    predicate_names: tuple
    specials: dict = field(compare=True)

    def __post_init__(self):
        object.__setattr__(self, "object_names", tuple(self.object_names))
        object.__setattr__(self, "predicate_names", tuple(self.predicate_names))
        object.__setattr__(self, "specials", dict(self.specials))
        for table, names in (("object", self.object_names), ("predicate", self.predicate_names)):
            if len(set(names)) != len(names):
                raise SceneGraphError(f"duplicate {table} labels in vocabulary")
        for key, table, names in (
            (UNKNOWN_OBJ, "objects", self.object_names),
            (IMAGE, "objects", self.object_names),
            (UNKNOWN_PRED, "predicates", self.predicate_names),
            (NONE_PRED, "predicates", self.predicate_names),
            (IN_IMAGE, "predicates", self.predicate_names),
        ):
            idx = self.specials.get(key)
            if idx is None or not 0 <= idx < len(names):
                raise SceneGraphError(f"special {key!r} missing or out of range in {table}")
        if len(set(self.specials[k] for k in OBJECT_SPECIALS)) != len(OBJECT_SPECIALS):
            raise SceneGraphError("object specials must occupy distinct indices")
        if len(set(self.specials[k] for k in PREDICATE_SPECIALS)) != len(PREDICATE_SPECIALS):
            raise SceneGraphError("predicate specials must occupy distinct indices")
        if len(self.object_names) <= len(OBJECT_SPECIALS) or len(self.predicate_names) <= len(PREDICATE_SPECIALS):
            raise SceneGraphError("vocabulary needs at least one real object and one real predicate")
        object.__setattr__(self, "_obj_index", {n: i for i, n in enumerate(self.object_names)})
        object.__setattr__(self, "_pred_index", {n: i for i, n in enumerate(self.predicate_names)})

    def __hash__(self):
        return hash((self.object_names, self.predicate_names, tuple(sorted(self.specials.items()))))

    @classmethod
    def build(cls, objects, predicates):
        """Specials first, then the given real labels in order."""
        obj = list(OBJECT_SPECIALS) + [o for o in objects if o not in OBJECT_SPECIALS]
        pred = list(PREDICATE_SPECIALS) + [p for p in predicates if p not in PREDICATE_SPECIALS]
        specials = {k: obj.index(k) for k in OBJECT_SPECIALS}
        specials.update({k: pred.index(k) for k in PREDICATE_SPECIALS})
        return cls(obj, pred, specials)

    @property
    def num_objects(self):
        return len(self.object_names)

    @property
    def num_predicates(self):
        return len(self.predicate_names)

    @property
    def unknown_obj(self):
        return self.specials[UNKNOWN_OBJ]

    @property
    def image(self):
        return self.specials[IMAGE]

    @property
    def unknown_pred(self):
        return self.specials[UNKNOWN_PRED]

    @property
    def none_pred(self):
        return self.specials[NONE_PRED]

    @property
    def in_image(self):
        return self.specials[IN_IMAGE]

    @property
    def real_objects(self):
        special = {self.unknown_obj, self.image}
        return [i for i in range(self.num_objects) if i not in special]

    @property
    def real_predicates(self):
        special = {self.unknown_pred, self.none_pred, self.in_image}
        return [i for i in range(self.num_predicates) if i not in special]

    def object_index(self, label):
        try:
            return self._obj_index[label]
        except KeyError:
            raise UnknownCategoryError(f"unknown object category {label!r}") from None

    def predicate_index(self, label):
        try:
            return self._pred_index[label]
        except KeyError:
            raise UnknownCategoryError(f"unknown predicate category {label!r}") from None

    def to_dict(self):
        return {"objects": list(self.object_names), "predicates": list(self.predicate_names),
                "specials": dict(self.specials)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(doc["objects"], doc["predicates"], doc["specials"])
        except (KeyError, TypeError) as exc:
            raise SceneGraphError(f"malformed vocabulary document: {exc}") from None

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SceneGraphError(f"vocabulary is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def digest(self):
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SceneGraph:
    """Objects are category indices; edges are (subject pos, predicate, object pos)."""

    objects: tuple
    edges: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(int(o) for o in self.objects))
        object.__setattr__(self, "edges", tuple((int(s), int(p), int(o)) for s, p, o in self.edges))

    @property
    def num_nodes(self):
        return len(self.objects)

    @property
    def num_edges(self):
        return len(self.edges)

    def with_edges(self, edges):
        return SceneGraph(self.objects, edges)


@dataclass(frozen=True)
class GraphBatch:
    node_categories: np.ndarray
    edges: np.ndarray            # (E, 3) rows of (subject, predicate, object), global node rows
    node_graph: np.ndarray
    edge_graph: np.ndarray
    node_offsets: np.ndarray     # (B + 1,)
    edge_offsets: np.ndarray

    @property
    def num_graphs(self):
        return len(self.node_offsets) - 1

    @property
    def num_nodes(self):
        return len(self.node_categories)

    @property
    def num_edges(self):
        return len(self.edges)


def validate(graph, vocab):
    """List of violated invariants; empty when the graph is valid."""
    errors = []
    n = graph.num_nodes
    if n < 1:
        errors.append("graph has no nodes")
    for pos, cat in enumerate(graph.objects):
        if not 0 <= cat < vocab.num_objects:
            errors.append(f"node {pos}: object category {cat} out of range")
    seen = set()
    for k, (s, p, o) in enumerate(graph.edges):
        if not 0 <= p < vocab.num_predicates:
            errors.append(f"edge {k}: predicate category {p} out of range")
        for role, end in (("subject", s), ("object", o)):
            if not 0 <= end < n:
                errors.append(f"edge {k}: dangling {role} endpoint {end}")
        if s == o:
            errors.append(f"edge {k}: self-loop on node {s}")
        if (s, p, o) in seen:
            errors.append(f"edge {k}: duplicate triplet {(s, p, o)}")
        seen.add((s, p, o))
    return errors


def is_valid(graph, vocab):
    return not validate(graph, vocab)


def require_valid(graph, vocab):
    errors = validate(graph, vocab)
    if errors:
        raise SceneGraphError("; ".join(errors))


def add_dummy_node(graph, vocab):
    """Append an image node and an in_image edge from every original node to it."""
    if vocab.image in graph.objects:
        raise SceneGraphError("graph already contains an image node")
    dummy = graph.num_nodes
    edges = graph.edges + tuple((i, vocab.in_image, dummy) for i in range(graph.num_nodes))
    return SceneGraph(graph.objects + (vocab.image,), edges)


def strip_dummy_node(graph, vocab):
    positions = [i for i, c in enumerate(graph.objects) if c == vocab.image]
    if len(positions) != 1:
        raise SceneGraphError(f"expected exactly one image node, found {len(positions)}")
    dummy = positions[0]
    keep = [i for i in range(graph.num_nodes) if i != dummy]
    remap = {old: new for new, old in enumerate(keep)}
    edges = tuple((remap[s], p, remap[o]) for s, p, o in graph.edges if dummy not in (s, o))
    return SceneGraph(tuple(graph.objects[i] for i in keep), edges)


def weakly_connected(graph):
    if graph.num_nodes == 0:
        return False
    adj = [[] for _ in range(graph.num_nodes)]
    for s, _, o in graph.edges:
        adj[s].append(o)
        adj[o].append(s)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == graph.num_nodes


def _phrase(label):
    return label.replace("_", " ").lower()


def render_sentences(graph, vocab):
    """One "<subject> <predicate> <object>" line per edge, then one per isolated node."""
    if vocab.image in graph.objects:
        raise SceneGraphError("render_sentences expects a graph without the dummy node")
    lines = []
    touched = set()
    for s, p, o in graph.edges:
        lines.append(" ".join((_phrase(vocab.object_names[graph.objects[s]]),
                               _phrase(vocab.predicate_names[p]),
                               _phrase(vocab.object_names[graph.objects[o]]))))
        touched.update((s, o))
    for i, cat in enumerate(graph.objects):
        if i not in touched:
            lines.append(_phrase(vocab.object_names[cat]))
    return lines


def _dot_quote(text):
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph, vocab, highlight=None, name="scene_graph"):
    highlight = set(highlight or ())
    out = [f"digraph {name} {{", "  node [shape=box];"]
    for i, cat in enumerate(graph.objects):
        attrs = [f"label={_dot_quote(_phrase(vocab.object_names[cat]))}"]
        if i in highlight:
            attrs.append('style="filled,bold"')
            attrs.append('fillcolor="gold"')
        out.append(f"  n{i} [{', '.join(attrs)}];")
    for s, p, o in graph.edges:
        out.append(f"  n{s} -> n{o} [label={_dot_quote(_phrase(vocab.predicate_names[p]))}];")
    out.append("}")
    return "\n".join(out) + "\n"


def to_document(graph, vocab):
    return {
        "version": SCHEMA_VERSION,
        "objects": [vocab.object_names[c] for c in graph.objects],
        "edges": [[s, vocab.predicate_names[p], o] for s, p, o in graph.edges],
    }


def serialize(graph, vocab):
    return json.dumps(to_document(graph, vocab), ensure_ascii=False)


def from_document(doc, vocab):
    if not isinstance(doc, dict):
        raise SceneGraphError("scene-graph document must be a JSON object")
    for key in ("version", "objects", "edges"):
        if key not in doc:
            raise SceneGraphError(f"scene-graph document missing {key!r}")
    if doc["version"] != SCHEMA_VERSION:
        raise SceneGraphError(f"unsupported schema version {doc['version']!r} (expected {SCHEMA_VERSION})")
    if not isinstance(doc["objects"], list) or not isinstance(doc["edges"], list):
        raise SceneGraphError("'objects' and 'edges' must be lists")
    objects = [vocab.object_index(label) for label in doc["objects"]]
    edges = []
    for item in doc["edges"]:
        if not (isinstance(item, list) and len(item) == 3 and isinstance(item[0], int) and isinstance(item[2], int)):
            raise SceneGraphError(f"malformed edge entry {item!r}")
        edges.append((item[0], vocab.predicate_index(item[1]), item[2]))
    return SceneGraph(objects, edges)


def deserialize(text, vocab):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneGraphError(f"scene graph is not valid JSON: {exc}") from None
    return from_document(doc, vocab)


def batch(graphs):
    if not graphs:
        raise SceneGraphError("cannot batch an empty list of graphs")
    node_counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    edge_counts = np.array([g.num_edges for g in graphs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(node_counts)])
    edge_offsets = np.concatenate([[0], np.cumsum(edge_counts)])
    cats = np.fromiter((c for g in graphs for c in g.objects), dtype=np.int64, count=int(node_offsets[-1]))
    edges = np.zeros((int(edge_offsets[-1]), 3), dtype=np.int64)
    for k, g in enumerate(graphs):
        if g.num_edges:
            block = np.asarray(g.edges, dtype=np.int64)
            block[:, 0] += node_offsets[k]
            block[:, 2] += node_offsets[k]
            edges[edge_offsets[k]:edge_offsets[k + 1]] = block
    ids = np.arange(len(graphs))
    return GraphBatch(cats, edges, np.repeat(ids, node_counts), np.repeat(ids, edge_counts),
                      node_offsets, edge_offsets)


def unbatch(gb):
    graphs = []
    for k in range(gb.num_graphs):
        lo, hi = gb.node_offsets[k], gb.node_offsets[k + 1]
        block = gb.edges[gb.edge_offsets[k]:gb.edge_offsets[k + 1]].copy()
        block[:, 0] -= lo
        block[:, 2] -= lo
        graphs.append(SceneGraph(gb.node_categories[lo:hi].tolist(), [tuple(e) for e in block.tolist()]))
    return graphs


def induced_subgraph(graph, keep):
    """Node-induced subgraph on ``keep`` (kept in original order).

    Returns ``(subgraph, node_map, edge_ids)`` where ``node_map`` maps old to new
    positions and ``edge_ids`` lists the retained edge indices of ``graph``.
    """
    keep = sorted(set(int(k) for k in keep))
    node_map = {old: new for new, old in enumerate(keep)}
    edge_ids = [k for k, (s, _, o) in enumerate(graph.edges) if s in node_map and o in node_map]
    edges = [(node_map[graph.edges[k][0]], graph.edges[k][1], node_map[graph.edges[k][2]]) for k in edge_ids]
    return SceneGraph([graph.objects[i] for i in keep], edges), node_map, edge_ids


def neighbors(graph, nodes):
    """Undirected 1-hop neighbourhood of ``nodes`` (excluding the nodes themselves)."""
    nodes = set(nodes)
    out = set()
    for s, _, o in graph.edges:
        if s in nodes and o not in nodes:
            out.add(o)
        if o in nodes and s not in nodes:
            out.add(s)
    return out


def remove_node(graph, pos):
    keep = [i for i in range(graph.num_nodes) if i != pos]
    return induced_subgraph(graph, keep)[0]


def random_subgraph(graph, max_nodes, seed):
    """Induced subgraph on at most ``max_nodes`` nodes grown along edges from a random start."""
    if max_nodes < 1:
        raise ValueError("max_nodes must be at least 1")
    n = graph.num_nodes
    if max_nodes >= n:
        return graph
    rng = np.random.default_rng(seed)
    adj = [set() for _ in range(n)]
    for s, _, o in graph.edges:
        adj[s].add(o)
        adj[o].add(s)
    chosen = [int(rng.integers(n))]
    chosen_set = set(chosen)
    while len(chosen) < max_nodes:
        frontier = sorted(set().union(*(adj[c] for c in chosen)) - chosen_set)
        pool = frontier or sorted(set(range(n)) - chosen_set)
        pick = pool[int(rng.integers(len(pool)))]
        chosen.append(pick)
        chosen_set.add(pick)
    return induced_subgraph(graph, chosen)[0]
