"""Loss terms of the enrichment objective and their weighted combination."""
from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F

SCENE_MODES = ("logit_l1", "logit_l2", "logit_ce", "hidden_l1", "hidden_l2", "hpooled_l1", "hpooled_l2")
TERMS = ("obj", "edges", "gan", "pred_avail", "pred_not_avail", "scene", "im_sg")
UNIT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class LossWeights:
    obj: float = 1000.0
    edges: float = 1.0
    gan: float = 0.1
    pred_avail: float = 100.0
    pred_not_avail: float = 0.1
    scene: float = 200.0
    im_sg: float = 0.0
    scene_mode: str = "hpooled_l1"

    def __post_init__(self):
        for name in TERMS:
            w = getattr(self, name)
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"loss weight {name} must be finite and non-negative, got {w}")
        if self.scene_mode not in SCENE_MODES:
            raise ValueError(f"scene_mode must be one of {SCENE_MODES}, got {self.scene_mode!r}")

    def values(self):
        return astuple(self)[: len(TERMS)]

    def scaled(self, factor):
        return LossWeights(*(w * factor for w in self.values()), scene_mode=self.scene_mode)

    @property
    def needs_images(self):
        return self.scene > 0 or self.im_sg > 0


def loss_obj(logits, target):
    return F.cross_entropy(logits, target)


def edge_pair_weights(offsets):
    """(N, N) weights averaging BCE over each graph's ordered off-diagonal pairs, then over graphs."""
    n = int(offsets[-1])
    w = np.zeros((n, n))
    graphs = len(offsets) - 1
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        m = hi - lo
        if m > 1:
            w[lo:hi, lo:hi] = 1.0 / (m * (m - 1) * graphs)
    np.fill_diagonal(w, 0.0)
    return w


def loss_edges(edge_logits, gt_adjacency, offsets=None):
    """Mean BCE of sigmoid(edge_logits) against the 0/1 adjacency, diagonal excluded.

    With ``offsets`` the matrices are block-diagonal stacks of several graphs
    and cross-graph entries are ignored.
    """
    gt = np.asarray(gt_adjacency, dtype=float)
    if gt.shape != edge_logits.shape:
        raise ValueError(f"adjacency shape {gt.shape} != score shape {edge_logits.shape}")
    offsets = np.array([0, gt.shape[0]]) if offsets is None else offsets
    w = edge_pair_weights(offsets)
    per_pair = F.binary_cross_entropy_with_logits(edge_logits, gt, reduction="none")
    return F.sum(F.mul(per_pair, w.astype(edge_logits.dtype)))


def loss_edges_from_probs(probs, gt_adjacency, eps=1e-7):
    """Same average as :func:`loss_edges` for a single graph given post-sigmoid scores."""
    gt = np.asarray(gt_adjacency, dtype=float)
    if gt.shape != probs.shape:
        raise ValueError(f"adjacency shape {gt.shape} != score shape {probs.shape}")
    w = edge_pair_weights(np.array([0, gt.shape[0]]))
    per_pair = F.binary_cross_entropy(probs, gt, eps=eps, reduction="none")
    return F.sum(F.mul(per_pair, w.astype(probs.dtype)))


def loss_predicates(logits, targets, matched):
    """``(L_pred_avail, L_pred_not_avail)``: CE on matched edges vs. GT, unmatched vs. none_pred.

    ``targets`` already holds none_pred for unmatched rows; each term averages
    over its own rows and is exactly zero when it has none.
    """
    matched = np.asarray(matched, dtype=bool)
    targets = np.asarray(targets, dtype=np.int64)
    zero = Tensor(np.zeros((), dtype=logits.dtype if logits is not None else np.float32))
    if logits is None or logits.shape[0] == 0:
        return zero, zero
    per_edge = F.cross_entropy(logits, targets, reduction="none")
    terms = []
    for sel in (matched, ~matched):
        if sel.any():
            terms.append(F.scale(F.sum(F.mul(per_edge, sel.astype(logits.dtype))), 1.0 / sel.sum()))
        else:
            terms.append(zero)
    return terms[0], terms[1]


def loss_scene(feats_real, feats_fake, mode):
    """Scene-feature discrepancy between GT images and enriched-graph images."""
    if mode not in SCENE_MODES:
        raise ValueError(f"unknown scene mode {mode!r}")
    view, _, kind = mode.partition("_")
    view = "logits" if view == "logit" else view
    real, fake = getattr(feats_real, view), getattr(feats_fake, view)
    if kind == "ce":
        return F.cross_entropy(fake, np.argmax(real.data, axis=1))
    diff = F.l1_diff if kind == "l1" else F.l2_diff
    return F.mean(diff(real, fake))


def lp_scene_loss(a, b, p):
    """Mean L_p distance between feature rows (p in {1, 2})."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    return F.mean((F.l1_diff if p == 1 else F.l2_diff)(a, b))


def loss_align(f_graph, f_image):
    for name, t in (("graph", f_graph), ("image", f_image)):
        norms = np.linalg.norm(t.data, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
            raise ValueError(f"{name} features must be unit vectors")
    return F.neg(F.mean(F.sum(F.mul(f_graph, f_image), axis=1)))


def loss_gan(fake_logits, real_logits=None, role="generator", saturating=False):
    """Vanilla GAN losses on critic logits.

    ``discriminator``: -[mean log D(g) + mean log(1 - D(ĝ))].
    ``generator``: -mean log D(ĝ) (non-saturating) or mean log(1 - D(ĝ)).
    """
    if role == "discriminator":
        if real_logits is None:
            raise ValueError("discriminator loss needs real logits")
        real = F.binary_cross_entropy_with_logits(real_logits, np.ones(real_logits.shape))
        fake = F.binary_cross_entropy_with_logits(fake_logits, np.zeros(fake_logits.shape))
        return F.add(real, fake)
    if role != "generator":
        raise ValueError(f"role must be 'generator' or 'discriminator', got {role!r}")
    if saturating:
        return F.neg(F.binary_cross_entropy_with_logits(fake_logits, np.zeros(fake_logits.shape)))
    return F.binary_cross_entropy_with_logits(fake_logits, np.ones(fake_logits.shape))


def total_loss(parts, weights):
    """Weighted sum over the named ``parts``; zero-weight or missing terms are skipped."""
    w = dict(zip(TERMS, weights.values())) if isinstance(weights, LossWeights) else dict(weights)
    for name, value in w.items():
        if value < 0:
            raise ValueError(f"loss weight {name} must be non-negative")
    names = [n for n in TERMS if parts.get(n) is not None]
    return F.weighted_sum([parts[n] for n in names], [w.get(n, 0.0) for n in names])
