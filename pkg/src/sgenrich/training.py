"""Supervision from random object elimination, the generator/critic passes and the training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, Tensor, backward, clip_grad_norm, no_grad
from .autodiff import checkpoint as ckpt
from .autodiff import functional as F
from .critic import CriticModel
from .enricher import EnricherModel, object_mask, predicate_mask
from .graph import SceneGraph, SceneGraphError, Vocabulary
from .losses import (TERMS, loss_align, loss_edges, loss_gan, loss_obj, loss_predicates, loss_scene,
                     total_loss)
from .metrics import METRICS, evaluate
from .surrogates import Surrogates

log = logging.getLogger(__name__)

LOG_COLUMNS = (["step"] + [f"loss_{t}" for t in TERMS] + ["loss_total", "loss_disc", "d_updates"]
               + list(METRICS) + ["metric_sum"])


class NumericalError(FloatingPointError):
    """A loss or gradient became NaN/Inf."""


class GraphTooSmallWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainingExample:
    gt_graph: SceneGraph
    masked_graph: SceneGraph
    position: int
    category: int
    incident: tuple
    gt_adjacency: np.ndarray
    pair_predicates: dict

    @property
    def eliminated(self):
        return self.category, self.incident

    def placeholder_pairs(self):
        """Ordered pairs touching the eliminated node, first GT occurrence first."""
        return list(dict.fromkeys((s, o) for s, _, o in self.incident))


def make_example(gt_graph, vocab, seed):
    """Eliminate one uniformly chosen node, leaving an unknown_obj in its place.

    The masked graph keeps every other GT edge and links the unknown node to
    and from every other node by unknown_pred edges.
    """
    n = gt_graph.num_nodes
    if n < 2:
        raise SceneGraphError("make_example needs a graph with at least two nodes")
    pos = int(np.random.default_rng(seed).integers(n))
    incident = tuple(e for e in gt_graph.edges if pos in (e[0], e[2]))
    kept = [e for e in gt_graph.edges if pos not in (e[0], e[2])]
    for j in range(n):
        if j != pos:
            kept.append((pos, vocab.unknown_pred, j))
            kept.append((j, vocab.unknown_pred, pos))
    objects = list(gt_graph.objects)
    objects[pos] = vocab.unknown_obj
    adjacency = np.zeros((n, n), dtype=np.int8)
    for s, _, o in gt_graph.edges:
        adjacency[s, o] = 1
    pairs = {}
    for s, p, o in incident:
        pairs.setdefault((s, o), set()).add(p)
    return TrainingExample(gt_graph, SceneGraph(objects, kept), pos, gt_graph.objects[pos], incident, adjacency,
                           {k: frozenset(v) for k, v in pairs.items()})


def make_examples(graphs, vocab, seed):
    """One example per graph; graphs with fewer than two nodes are skipped with a warning."""
    out = []
    skipped = 0
    for i, g in enumerate(graphs):
        if g.num_nodes < 2:
            skipped += 1
            continue
        out.append(make_example(g, vocab, [*np.atleast_1d(seed).tolist(), i]))
    if skipped:
        warnings.warn(f"skipped {skipped} single-node graph(s)", GraphTooSmallWarning, stacklevel=2)
    return out


def block_adjacency(examples):
    n = sum(ex.gt_graph.num_nodes for ex in examples)
    gt = np.zeros((n, n))
    lo = 0
    for ex in examples:
        m = ex.gt_graph.num_nodes
        gt[lo:lo + m, lo:lo + m] = ex.gt_adjacency
        lo += m
    return gt


@dataclass
class GeneratorPass:
    parts: dict
    total: Tensor
    # detached inputs for a critic update
    real_graphs: list
    fake_graphs: list
    enriching: list
    node_soft: tuple
    edge_soft: tuple


def predicate_placeholders(ex, vocab, extra_pairs=()):
    """Teacher-forced predicate graph: GT graph, eliminated node's edges replaced by placeholders.

    Returns ``(graph, placeholder edge ids, targets, matched)``; ``extra_pairs``
    adds false-positive placeholders targeted at none_pred.
    """
    pos = ex.position
    edges = [e for e in ex.gt_graph.edges if pos not in (e[0], e[2])]
    base = len(edges)
    targets, matched = [], []
    for s, o in ex.placeholder_pairs():
        edges.append((s, vocab.unknown_pred, o))
        targets.append(next(p for s2, p, o2 in ex.incident if (s2, o2) == (s, o)))
        matched.append(True)
    for s, o in extra_pairs:
        edges.append((s, vocab.unknown_pred, o))
        targets.append(vocab.none_pred)
        matched.append(False)
    return SceneGraph(ex.gt_graph.objects, edges), list(range(base, len(edges))), targets, matched


def _false_positive_pairs(ex, probs, threshold):
    pos = ex.position
    gt = set(ex.placeholder_pairs())
    out = []
    for j in range(len(probs)):
        if j == pos:
            continue
        for pair in ((pos, j), (j, pos)):
            if pair not in gt and probs[pair] > threshold:
                out.append(pair)
    return out


def generator_forward(model, examples, weights, critic=None, surrogates=None, pred_edges="gt", threshold=0.5,
                      saturating=False, rng=None):
    """All generator-side loss terms for one batch of examples."""
    vocab = model.vocab
    cats = np.array([ex.category for ex in examples])
    op = model.object_pass([ex.masked_graph for ex in examples], [ex.position for ex in examples])
    obj_logits = F.add(op.logits, object_mask(vocab))
    parts = {"obj": loss_obj(obj_logits, cats)}

    e_logits, offsets = model.edge_logits(op, model.embed_objects(cats))
    parts["edges"] = loss_edges(e_logits, block_adjacency(examples), offsets)

    tilde, ids, targets, matched = [], [], [], []
    probs = F.sigmoid(Tensor(e_logits.data)).data if pred_edges == "gt+predicted" else None
    for k, ex in enumerate(examples):
        extra = ()
        if probs is not None:
            lo, hi = offsets[k], offsets[k + 1]
            extra = _false_positive_pairs(ex, probs[lo:hi, lo:hi], threshold)
        g, i, t, m = predicate_placeholders(ex, vocab, extra)
        tilde.append(g)
        ids.append(i)
        targets.extend(t)
        matched.extend(m)
    p_logits = None
    if targets:
        p_logits = F.add(model.predicate_pass(tilde, ids), predicate_mask(vocab, allow_none=True))
    parts["pred_avail"], parts["pred_not_avail"] = loss_predicates(p_logits, targets, matched)

    # the enriched graph ĝ: teacher-forced structure with predicted distributions
    fakes = [SceneGraph([vocab.unknown_obj if i == ex.position else c for i, c in enumerate(g.objects)], g.edges)
             for ex, g in zip(examples, tilde)]
    node_soft = ([(k, ex.position) for k, ex in enumerate(examples)], F.softmax(obj_logits, axis=1))
    edge_pairs = [(k, i) for k, idx in enumerate(ids) for i in idx]
    edge_soft = (edge_pairs, F.softmax(p_logits, axis=1)) if edge_pairs else None
    reals = [ex.gt_graph for ex in examples]
    enriching = [[ex.position] for ex in examples]

    if weights.gan > 0 and critic is not None:
        fake_logits = critic(fakes, enriching, node_soft, edge_soft, rng=rng)
        parts["gan"] = loss_gan(fake_logits, role="generator", saturating=saturating)
    if weights.needs_images and surrogates is not None:
        node_offsets = np.concatenate([[0], np.cumsum([g.num_nodes for g in fakes])])
        node_rows = node_offsets[:-1] + np.array([ex.position for ex in examples])
        edge_rows = None
        if edge_soft is not None:
            edge_offsets = np.concatenate([[0], np.cumsum([g.num_edges for g in fakes])])
            edge_rows = np.array([edge_offsets[k] + i for k, i in edge_pairs])
        fake_images = surrogates.synth(fakes, (node_rows, node_soft[1]),
                                       (edge_rows, edge_soft[1]) if edge_soft is not None else None)
        if weights.scene > 0:
            with no_grad():
                real_feats = surrogates.characterizer(surrogates.synth(reals))
            parts["scene"] = loss_scene(real_feats, surrogates.characterizer(fake_images), weights.scene_mode)
        if weights.im_sg > 0:
            hard = _hard_graphs(examples, tilde, ids, obj_logits.data,
                                p_logits.data if p_logits is not None else None, vocab)
            parts["im_sg"] = loss_align(surrogates.aligner.encode_graph(hard), surrogates.aligner.encode_image(fake_images))

    total = total_loss(parts, weights)
    detached_node = (node_soft[0], Tensor(node_soft[1].data))
    detached_edge = (edge_soft[0], Tensor(edge_soft[1].data)) if edge_soft is not None else None
    return GeneratorPass(parts, total, reals, fakes, enriching, detached_node, detached_edge)


def _hard_graphs(examples, tilde, ids, obj_logits, pred_logits, vocab):
    out, cursor = [], 0
    for k, (ex, g) in enumerate(zip(examples, tilde)):
        objects = list(g.objects)
        objects[ex.position] = int(np.argmax(obj_logits[k]))
        placeholder = set(ids[k])
        edges = [e for i, e in enumerate(g.edges) if i not in placeholder]
        seen = set(edges)
        for i in ids[k]:
            p = int(np.argmax(pred_logits[cursor]))
            cursor += 1
            s, _, o = g.edges[i]
            if p != vocab.none_pred and (s, p, o) not in seen:
                edges.append((s, p, o))
                seen.add((s, p, o))
        out.append(SceneGraph(objects, edges))
    return out


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what}: {value}")


class Trainer:
    """Adversarial training of the enricher against the scene-graph critic."""

    def __init__(self, config, vocab, train_graphs, val_graphs, run_dir=None, corpus_digest=None):
        self.config = config
        self.vocab = vocab
        self.weights = config.loss_weights
        self.generator = EnricherModel(vocab, seed=config.seed, **config.generator_kwargs())
        self.critic = CriticModel(vocab, seed=config.seed + 1, **config.critic_kwargs())
        self.surrogates = Surrogates(vocab, config.surrogate_config)
        betas = (config.beta1, config.beta2)
        self.g_opt = Adam(self.generator.named_parameters(), config.lr, betas)
        self.d_opt = Adam(self.critic.named_parameters(), config.lr, betas)
        self.train_graphs = [g for g in train_graphs if g.num_nodes >= 2]
        if len(self.train_graphs) < len(train_graphs):
            warnings.warn(f"skipped {len(train_graphs) - len(self.train_graphs)} single-node training graph(s)",
                          GraphTooSmallWarning, stacklevel=2)
        if not self.train_graphs:
            raise SceneGraphError("no training graph has two or more nodes")
        self.val_examples = make_examples(val_graphs, vocab, [config.seed, 1]) if val_graphs else []
        self.run_dir = run_dir
        self.corpus_digest = corpus_digest
        self.step = 0
        self.d_updates = 0
        self.best = -math.inf
        self.bad_evals = 0
        self.stopped = False
        self._accum = {}
        self._accum_count = 0

    @property
    def use_surrogates(self):
        return self.weights.needs_images

    # -- one step ----------------------------------------------------------------

    def sample_examples(self, step):
        rng = np.random.default_rng([self.config.seed, 2, step])
        size = min(self.config.batch_size, len(self.train_graphs))
        idx = rng.choice(len(self.train_graphs), size=size, replace=False)
        return [make_example(self.train_graphs[i], self.vocab, [self.config.seed, 3, step, j])
                for j, i in enumerate(idx)]

    def train_step(self):
        self.step += 1
        cfg = self.config
        self.generator.stream.set_step(self.step)
        self.critic.stream.set_step(self.step)
        self.generator.train()
        self.critic.train()
        examples = self.sample_examples(self.step)
        gp = generator_forward(self.generator, examples, self.weights, self.critic,
                               self.surrogates if self.use_surrogates else None, cfg.pred_edges, cfg.threshold,
                               cfg.disc_saturating, np.random.default_rng([cfg.seed, 4, self.step]))
        values = {name: float(t.data) for name, t in gp.parts.items()}
        values["total"] = float(gp.total.data)
        for name, v in values.items():
            _finite(v, f"loss {name} at step {self.step}")
        self.generator.zero_grad()
        self.critic.zero_grad()
        backward(gp.total)
        self.critic.zero_grad()
        clip_grad_norm(self.generator.parameters(), cfg.clip_norm)
        self.g_opt.step()

        if self.weights.gan > 0 and self.step % cfg.disc_update_every == 0:
            values["disc"] = self.discriminator_step(gp)
        self._accumulate(values)
        return values

    def discriminator_step(self, gp):
        rng = np.random.default_rng([self.config.seed, 5, self.step])
        real = self.critic(gp.real_graphs, None, rng=rng)
        fake = self.critic(gp.fake_graphs, gp.enriching, gp.node_soft, gp.edge_soft, rng=rng)
        loss = loss_gan(fake, real, role="discriminator")
        _finite(float(loss.data), f"discriminator loss at step {self.step}")
        self.critic.zero_grad()
        backward(loss)
        clip_grad_norm(self.critic.parameters(), self.config.clip_norm)
        self.d_opt.step()
        self.d_updates += 1
        return float(loss.data)

    def _accumulate(self, values):
        for k, v in values.items():
            total, count = self._accum.get(k, (0.0, 0))
            self._accum[k] = (total + v, count + 1)
        self._accum_count += 1

    # -- evaluation and the loop ------------------------------------------------------

    def evaluate(self, examples=None, teacher_forcing=True):
        examples = self.val_examples if examples is None else examples
        if not examples:
            raise SceneGraphError("no validation examples to evaluate")
        return evaluate(self.generator, examples, self.surrogates if self.use_surrogates else None,
                        self.config.threshold, self.config.max_edges, teacher_forcing)

    def log_row(self, report):
        row = {"step": self.step, "d_updates": self.d_updates}
        for t in TERMS + ("total", "disc"):
            total, count = self._accum.get(t, (None, 0))
            row[f"loss_{t}"] = repr(total / count) if count else ""
        for m in METRICS:
            v = report.values.get(m) if report is not None else None
            row[m] = repr(v) if v is not None else ""
        row["metric_sum"] = repr(report.metric_sum(self.use_surrogates)) if report is not None else ""
        self._accum, self._accum_count = {}, 0
        return row

    def fit(self, steps=None, callback=None):
        """Train until ``steps`` total generator steps or early stopping; returns logged rows."""
        cfg = self.config
        steps = cfg.steps if steps is None else steps
        rows = []
        if self.run_dir:
            self.write_manifest()
        while self.step < steps and not self.stopped:
            self.train_step()
            at_eval = self.step % cfg.eval_interval == 0 or self.step == steps
            report = None
            if at_eval and self.val_examples:
                report = self.evaluate()
                score = report.metric_sum(self.use_surrogates)
                if score > self.best:
                    self.best, self.bad_evals = score, 0
                    if self.run_dir:
                        self.save(os.path.join(self.run_dir, "checkpoints", "best.ckpt"))
                else:
                    self.bad_evals += 1
                    if self.bad_evals >= cfg.patience:
                        self.stopped = True
                        log.info("early stop at step %d (best metric sum %.4f)", self.step, self.best)
            if at_eval:
                row = self.log_row(report)
                rows.append(row)
                if self.run_dir:
                    self._append_csv(row)
                if callback:
                    callback(self, row, report)
            if self.run_dir and (self.step % cfg.checkpoint_interval == 0 or self.step == steps or self.stopped):
                path = os.path.join(self.run_dir, "checkpoints", f"step_{self.step:06d}.ckpt")
                self.save(path)
                self.save(os.path.join(self.run_dir, "checkpoints", "latest.ckpt"))
        return rows

    # -- persistence -------------------------------------------------------------

    def _append_csv(self, row):
        path = os.path.join(self.run_dir, "metrics.csv")
        fresh = not os.path.exists(path)
        with open(path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            if fresh:
                writer.writeheader()
            writer.writerow(row)

    def manifest(self):
        return {
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "vocabulary_sha256": self.vocab.digest(),
            "surrogates": self.surrogates.config.to_dict(),
            "corpus_sha256": self.corpus_digest,
            "train_graphs": len(self.train_graphs),
            "val_examples": len(self.val_examples),
        }

    def write_manifest(self):
        os.makedirs(self.run_dir, exist_ok=True)
        with open(os.path.join(self.run_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)

    def state(self):
        tensors = {}
        for prefix, module in (("generator", self.generator), ("critic", self.critic)):
            for name, value in module.state_dict().items():
                tensors[f"{prefix}/{name}"] = value
        for prefix, opt in (("adam_g", self.g_opt), ("adam_d", self.d_opt)):
            for name, value in opt.state_dict().items():
                tensors[f"{prefix}/{name}"] = value
        meta = {
            "kind": "sgenrich-run",
            "step": self.step,
            "d_updates": self.d_updates,
            "best": self.best if math.isfinite(self.best) else None,
            "bad_evals": self.bad_evals,
            "stopped": self.stopped,
            "accum": {k: list(v) for k, v in self._accum.items()},
            "accum_count": self._accum_count,
            "config": self.config.to_dict(),
            "vocabulary": self.vocab.to_dict(),
            "vocabulary_sha256": self.vocab.digest(),
            "surrogates": self.surrogates.config.to_dict(),
        }
        return tensors, meta

    def save(self, path):
        tensors, meta = self.state()
        ckpt.save(path, tensors, meta)

    def load(self, path):
        tensors, meta = ckpt.load(path)
        if meta.get("vocabulary_sha256") != self.vocab.digest():
            raise ckpt.CheckpointError("checkpoint vocabulary does not match the corpus vocabulary")
        for prefix, module in (("generator", self.generator), ("critic", self.critic)):
            module.load_state_dict({k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + "/")})
        for prefix, opt in (("adam_g", self.g_opt), ("adam_d", self.d_opt)):
            opt.load_state_dict({k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + "/")})
        self.step = int(meta["step"])
        self.d_updates = int(meta["d_updates"])
        self.best = -math.inf if meta["best"] is None else float(meta["best"])
        self.bad_evals = int(meta["bad_evals"])
        self.stopped = bool(meta["stopped"])
        self._accum = {k: (float(v[0]), int(v[1])) for k, v in meta["accum"].items()}
        self._accum_count = int(meta["accum_count"])
        if self.run_dir:
            self._truncate_csv()
        return meta

    def _truncate_csv(self):
        path = os.path.join(self.run_dir, "metrics.csv")
        if not os.path.exists(path):
            return
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(fh) if int(r["step"]) <= self.step]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)


def load_generator(path):
    """Rebuild the enricher (and its vocabulary and config) from a run checkpoint."""
    from .config import RunConfig

    tensors, meta = ckpt.load(path)
    if meta.get("kind") != "sgenrich-run":
        raise ckpt.CheckpointError(f"{path}: not a training checkpoint")
    vocab = Vocabulary.from_dict(meta["vocabulary"])
    config = RunConfig(**meta["config"])
    model = EnricherModel(vocab, seed=config.seed, **config.generator_kwargs())
    model.load_state_dict({k[len("generator/"):]: v for k, v in tensors.items() if k.startswith("generator/")})
    model.eval()
    return model, vocab, config, meta
