"""Frozen, differentiable stand-ins for the image synthesizer, scene classifier and image-text aligner.

All three are randomly initialised from a fixed seed and never trained.
They exist so the auxiliary losses have a live gradient path from soft
scene-graph predictions into the generator.
"""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import MLP, Embedding, LayerFactory, Linear, Module, RngStream, Tensor
from .autodiff import functional as F
from .graph import batch, render_sentences

SURROGATE_SEED = 20240917


@dataclass(frozen=True)
class SurrogateConfig:
    image_size: int = 32
    patch_size: int = 8
    scene_classes: int = 16
    embed_dim: int = 32
    hidden_dim: int = 64
    align_dim: int = 32
    seed: int = SURROGATE_SEED

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be a multiple of patch_size")
        if self.hidden_dim % 4:
            raise ValueError("hidden_dim must be divisible by 4")
        if min(self.image_size, self.scene_classes, self.embed_dim, self.hidden_dim, self.align_dim) < 1:
            raise ValueError("surrogate widths must be positive")

    def to_dict(self):
        return asdict(self)


def _freeze(module):
    for p in module.parameters():
        p.requires_grad = False
    module.eval()
    return module


def _factory(seed, salt):
    return LayerFactory(np.random.default_rng([seed, salt]), RngStream(seed))


class ToySynthesizer(Module):
    """Per-node box and colour from a context-mixed embedding, rendered by Gaussian splatting."""

    def __init__(self, vocab, config):
        factory = _factory(config.seed, 1)
        self.size = config.image_size
        self.obj_embed = Embedding(vocab.num_objects, config.embed_dim, factory.rng)
        self.pred_embed = Embedding(vocab.num_predicates, config.embed_dim, factory.rng)
        self.head = MLP([2 * config.embed_dim, config.hidden_dim, 7], factory, activation="relu")
        coords = (np.arange(self.size) + 0.5) / self.size
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        self._gx = xx.reshape(1, -1)
        self._gy = yy.reshape(1, -1)
        _freeze(self)

    def boxes(self, graphs, node_soft=None, edge_soft=None):
        """Per-node ``(cx, cy, sx, sy, rgb)`` tensors for a list of graphs (no dummy)."""
        gb = batch(graphs)
        node_rows, node_probs = node_soft if node_soft is not None else (None, None)
        edge_rows, edge_probs = edge_soft if edge_soft is not None else (None, None)
        nodes = self.obj_embed(gb.node_categories, node_rows, node_probs)
        s, o = gb.edges[:, 0], gb.edges[:, 2]
        if gb.num_edges:
            preds = self.pred_embed(gb.edges[:, 1], edge_rows, edge_probs)
            msgs = F.concat([F.add(preds, F.take_rows(nodes, o)), F.add(preds, F.take_rows(nodes, s))], axis=0)
            ctx = F.segment_mean(msgs, np.concatenate([s, o]), gb.num_nodes)
        else:
            ctx = Tensor(np.zeros(nodes.shape, dtype=nodes.dtype))
        raw = self.head(F.concat([nodes, ctx], axis=1))
        cx, cy, sx, sy, rgb = F.split(raw, [1, 1, 1, 1, 3], axis=1)
        cx, cy = F.sigmoid(cx), F.sigmoid(cy)
        sx = F.add(F.scale(F.sigmoid(sx), 0.25), 0.05)
        sy = F.add(F.scale(F.sigmoid(sy), 0.25), 0.05)
        return gb, (cx, cy, sx, sy, F.tanh(rgb))

    def forward(self, graphs, node_soft=None, edge_soft=None):
        """Images of shape (B, 3, S, S)."""
        gb, (cx, cy, sx, sy, rgb) = self.boxes(graphs, node_soft, edge_soft)
        tx = F.div(F.square(F.sub(self._gx, cx)), F.scale(F.square(sx), 2.0))
        ty = F.div(F.square(F.sub(self._gy, cy)), F.scale(F.square(sy), 2.0))
        blobs = F.exp(F.neg(F.add(tx, ty)))
        n, p = blobs.shape
        painted = F.mul(F.reshape(rgb, (n, 3, 1)), F.reshape(blobs, (n, 1, p)))
        images = F.segment_sum(F.reshape(painted, (n, 3 * p)), gb.node_graph, gb.num_graphs)
        return F.reshape(images, (gb.num_graphs, 3, self.size, self.size))


@dataclass
class SceneFeatures:
    logits: Tensor
    hidden: Tensor
    hpooled: Tensor


class ToyCharacterizer(Module):
    """Patch MLP: mean patch feature (hidden), its 4-way average (hpooled), class logits."""

    def __init__(self, config):
        factory = _factory(config.seed, 2)
        self.size, self.patch = config.image_size, config.patch_size
        self.patch_mlp = MLP([3 * self.patch ** 2, config.hidden_dim, config.hidden_dim], factory,
                             activation="relu", final_activation=True)
        self.classifier = Linear(config.hidden_dim, config.scene_classes, factory.rng)
        self.hidden_dim = config.hidden_dim
        _freeze(self)

    def patches(self, images):
        b = images.shape[0]
        if images.shape[1:] != (3, self.size, self.size):
            raise ValueError(f"expected images of shape (B, 3, {self.size}, {self.size}), got {images.shape}")
        k, p = self.size // self.patch, self.patch
        x = F.reshape(images, (b, 3, k, p, k, p))
        x = F.transpose(x, (0, 2, 4, 1, 3, 5))
        return F.reshape(x, (b * k * k, 3 * p * p)), k * k

    def forward(self, images):
        b = images.shape[0]
        flat, count = self.patches(images)
        feats = F.reshape(self.patch_mlp(flat), (b, count, self.hidden_dim))
        hidden = F.mean(feats, axis=1)
        hpooled = F.mean(F.reshape(hidden, (b, self.hidden_dim // 4, 4)), axis=2)
        return SceneFeatures(self.classifier(hidden), hidden, hpooled)


def _tokens(line):
    return re.findall(r"[a-z0-9]+", line.lower())


class ToyAligner(Module):
    """Bag-of-token sentence encoder and pooled-image encoder sharing one unit-norm space."""

    def __init__(self, vocab, config):
        factory = _factory(config.seed, 3)
        words = sorted({t for name in vocab.object_names + vocab.predicate_names for t in _tokens(name)})
        self.token_index = {w: i + 1 for i, w in enumerate(words)}   # 0 is out-of-vocabulary
        self.vocab = vocab
        self.tokens = Embedding(len(words) + 1, config.embed_dim, factory.rng)
        self.text_proj = Linear(config.embed_dim, config.align_dim, factory.rng)
        self.grid = 4
        self.size = config.image_size
        self.image_proj = MLP([3 * self.grid ** 2, config.hidden_dim, config.align_dim], factory, activation="relu")
        _freeze(self)

    def encode_graph(self, graphs):
        rows = []
        for g in graphs:
            ids = [self.token_index.get(t, 0) for line in render_sentences(g, self.vocab) for t in _tokens(line)]
            rows.append(self.tokens.weight.data[ids].mean(axis=0) if ids else np.zeros(self.tokens.weight.shape[1]))
        x = Tensor(np.stack(rows).astype(self.tokens.weight.dtype))
        return F.l2_normalize(self.text_proj(x))

    def encode_image(self, images):
        b, s, k = images.shape[0], self.size, self.grid
        x = F.reshape(images, (b, 3, k, s // k, k, s // k))
        x = F.mean(F.mean(x, axis=5), axis=3)
        return F.l2_normalize(self.image_proj(F.reshape(x, (b, 3 * k * k))))

    def forward(self, graphs, images):
        return self.encode_graph(graphs), self.encode_image(images)


class Surrogates(Module):
    def __init__(self, vocab, config=None):
        self.config = config or SurrogateConfig()
        self.synth = ToySynthesizer(vocab, self.config)
        self.characterizer = ToyCharacterizer(self.config)
        self.aligner = ToyAligner(vocab, self.config)
        self.name = "toy_characterizer"

    def train(self, mode=True):
        # frozen stand-ins always run in inference mode
        return super().train(False)
