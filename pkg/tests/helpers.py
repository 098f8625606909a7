"""Independent oracles shared by the test modules."""
from __future__ import annotations

import numpy as np

from sgenrich.autodiff import Tensor, precision
from sgenrich.autodiff import functional as F
from sgenrich.graph import SceneGraph, Vocabulary

OBJECTS = ["apple", "bench", "car", "dog", "egg", "fence", "girl", "hat"]
PREDICATES = ["above", "behind", "has", "near", "on"]


def small_vocab():
    return Vocabulary.build(OBJECTS, PREDICATES)


def random_graph(rng, vocab, n=None, max_nodes=8, density=0.3, min_nodes=1):
    """Random valid graph over real categories; ``n`` nodes, Bernoulli ordered pairs."""
    n = int(rng.integers(min_nodes, max_nodes + 1)) if n is None else n
    objects = rng.choice(vocab.real_objects, size=n).tolist()
    edges = []
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < density:
                edges.append((i, int(rng.choice(vocab.real_predicates)), j))
    return SceneGraph(objects, edges)


def connected_graph(rng, vocab, n):
    """Random graph where every node touches at least one edge (n >= 2)."""
    g = random_graph(rng, vocab, n=n, density=0.25)
    edges = list(g.edges)
    touched = {e[0] for e in edges} | {e[2] for e in edges}
    for i in range(n):
        if i not in touched:
            j = (i + 1) % n
            edges.append((i, int(rng.choice(vocab.real_predicates)), j))
            touched |= {i, j}
    return SceneGraph(g.objects, edges)


def permute_graph(graph, perm):
    """Relabel nodes: new position ``k`` holds old node ``perm[k]``."""
    inverse = {int(old): new for new, old in enumerate(perm)}
    objects = [graph.objects[old] for old in perm]
    edges = [(inverse[s], p, inverse[o]) for s, p, o in graph.edges]
    return SceneGraph(objects, edges)


# -- finite differences -------------------------------------------------------------

def numeric_grad(fn, arrays, eps=1e-6):
    """Central differences of scalar ``fn(*arrays)`` with respect to every input entry."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            up = fn(*arrays)
            a[idx] = old - eps
            down = fn(*arrays)
            a[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return num / den


def gradcheck(op, arrays, rng, eps=1e-6):
    """Largest relative error between reverse-mode and central-difference gradients.

    ``op`` maps float64 tensors to a tensor; it is reduced to a scalar with
    a fixed random projection so every output entry contributes.
    """
    with precision(np.float64):
        return _gradcheck(op, [np.array(a, dtype=np.float64) for a in arrays], rng, eps)


def _gradcheck(op, arrays, rng, eps):
    probe = {}

    def scalar(*values):
        out = op(*[Tensor(v) for v in values]).data
        if "w" not in probe:
            probe["w"] = rng.standard_normal(np.shape(out))
        return float(np.sum(out * probe["w"]))

    scalar(*arrays)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*tensors)
    loss = F.sum(F.mul(out, Tensor(probe["w"])))
    loss.backward()
    numeric = numeric_grad(scalar, arrays, eps)
    return max(relative_error(t.grad if t.grad is not None else np.zeros_like(t.data), n)
               for t, n in zip(tensors, numeric))


def param_gradcheck(module, forward, rng, eps=1e-6):
    """Finite-difference check of ``forward()`` (a scalar Tensor) w.r.t. all module parameters."""
    params = [p for _, p in module.named_parameters()]
    module.zero_grad()
    forward().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def scalar(*_):
        return float(forward().data)

    numeric = numeric_grad(scalar, [p.data for p in params], eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


# -- naive GConv --------------------------------------------------------------------

def _act(kind, x, slope=0.2):
    if kind == "relu":
        return max(x, 0.0)
    return x if x > 0 else slope * x


def naive_mlp(mlp, vec, activation="leakyrelu"):
    """Scalar-loop MLP evaluation (no norm, eval-mode dropout)."""
    x = [float(v) for v in vec]
    last = len(mlp.linears) - 1
    for k, lin in enumerate(mlp.linears):
        w, b = lin.weight.data, lin.bias.data
        y = []
        for j in range(w.shape[1]):
            acc = float(b[j])
            for i in range(w.shape[0]):
                acc += x[i] * float(w[i, j])
            y.append(acc)
        if k < last or mlp.final_act is not None:
            y = [_act(activation, v) for v in y]
        x = y
    return np.array(x)


def naive_gconv(layer, nodes, preds, edges, activation="leakyrelu"):
    """Per-edge / per-node loop reference for one GConv layer."""
    h = layer.hidden
    n = nodes.shape[0]
    sums = [np.zeros(h) for _ in range(n)]
    counts = [0] * n
    new_preds = []
    for k, (s, _, o) in enumerate(edges):
        out = naive_mlp(layer.f_g, np.concatenate([nodes[s], preds[k], nodes[o]]), activation)
        cand_s, cand_r, cand_o = out[:h], out[h:2 * h], out[2 * h:]
        new_preds.append(naive_mlp(layer.f_r, np.concatenate([preds[k], cand_r]), activation))
        sums[s] = sums[s] + cand_s
        counts[s] += 1
        sums[o] = sums[o] + cand_o
        counts[o] += 1
    new_nodes = []
    for i in range(n):
        pooled = sums[i] / counts[i] if counts[i] else np.zeros(h)
        new_nodes.append(naive_mlp(layer.f_o, np.concatenate([nodes[i], pooled]), activation))
    return np.array(new_nodes), np.array(new_preds).reshape(len(edges), layer.d_out)


# -- small training setups ------------------------------------------------------------

def tiny_config(**changes):
    """A seconds-scale RunConfig (outside the searched domains, so strict checks are off)."""
    from sgenrich.config import RunConfig

    base = dict(strict_domains=False, batch_size=4, gen_embed_dim=8, disc_embed_dim=8, eval_interval=5,
                checkpoint_interval=5, steps=10, image_size=16)
    base.update(changes)
    return RunConfig(**base)


# -- stub models for the metric harness ----------------------------------------------------

class _Op:
    def __init__(self, logits, chunk, sizes):
        from sgenrich.autodiff import Tensor

        self.logits = Tensor(logits)
        self.chunk = chunk
        self.sizes = sizes


class StubModel:
    """Duck-typed enricher whose heads read the ground truth (``mode="perfect"``) or noise.

    ``examples`` are the :class:`TrainingExample` s that will be evaluated,
    consumed in order (distinct GT graphs can share a masked graph).
    """

    training = False

    def __init__(self, vocab, examples, mode="perfect", seed=0):
        self.vocab = vocab
        self.mode = mode
        self.rng = np.random.default_rng(seed)
        self.queue = list(examples)
        self.cursor = 0
        self._chunk = None

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def object_pass(self, graphs, positions):
        chunk = self.queue[self.cursor:self.cursor + len(graphs)]
        self.cursor += len(graphs)
        assert [ex.masked_graph for ex in chunk] == list(graphs), "stub fed out of order"
        k = self.vocab.num_objects
        if self.mode == "perfect":
            logits = np.full((len(chunk), k), -10.0)
            logits[np.arange(len(chunk)), [ex.category for ex in chunk]] = 10.0
        else:
            logits = self.rng.standard_normal((len(chunk), k))
        self._chunk = chunk
        return _Op(logits, chunk, [g.num_nodes for g in graphs])

    def embed_objects(self, categories=None, probs=None):
        return categories

    def edge_logits(self, op, unknown_embedding):
        from sgenrich.autodiff import Tensor

        offsets = np.concatenate([[0], np.cumsum(op.sizes)])
        n = int(offsets[-1])
        if self.mode == "perfect":
            logits = np.full((n, n), -10.0)
            for k, ex in enumerate(op.chunk):
                lo, hi = offsets[k], offsets[k + 1]
                logits[lo:hi, lo:hi] = np.where(ex.gt_adjacency > 0, 10.0, -10.0)
        else:
            logits = np.log(1.0 / self.rng.random((n, n)) - 1.0)   # sigmoid gives U(0, 1)
        return Tensor(logits), offsets

    def predicate_pass(self, graphs, placeholder_ids):
        from sgenrich.autodiff import Tensor

        rows = []
        for ex, g, ids in zip(self._chunk, graphs, placeholder_ids):
            for i in ids:
                s, _, o = g.edges[i]
                row = np.full(self.vocab.num_predicates, -10.0)
                if self.mode == "perfect":
                    gt = ex.pair_predicates.get((s, o))
                    row[min(gt) if gt else self.vocab.none_pred] = 10.0
                else:
                    row = self.rng.standard_normal(self.vocab.num_predicates)
                rows.append(row)
        return Tensor(np.array(rows).reshape(-1, self.vocab.num_predicates))
