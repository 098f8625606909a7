import numpy as np
import pytest

from helpers import connected_graph, small_vocab
from sgenrich.autodiff import Tensor
from sgenrich.graph import SceneGraph
from sgenrich.surrogates import SurrogateConfig, Surrogates

VOCAB = small_vocab()


@pytest.fixture(scope="module")
def surrogates():
    return Surrogates(VOCAB, SurrogateConfig(image_size=16, patch_size=4))


@pytest.mark.parametrize("kwargs", [dict(image_size=30), dict(hidden_dim=30), dict(scene_classes=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SurrogateConfig(**kwargs)


def test_all_parameters_are_frozen_and_eval_sticks(surrogates):
    assert all(not p.requires_grad for p in surrogates.parameters())
    surrogates.train()
    assert not surrogates.training


def test_shapes(surrogates):
    graphs = [connected_graph(np.random.default_rng(s), VOCAB, 3) for s in range(2)] + [SceneGraph([2], [])]
    images = surrogates.synth(graphs)
    assert images.shape == (3, 3, 16, 16)
    feats = surrogates.characterizer(images)
    cfg = surrogates.config
    assert feats.logits.shape == (3, cfg.scene_classes)
    assert feats.hidden.shape == (3, cfg.hidden_dim)
    assert feats.hpooled.shape == (3, cfg.hidden_dim // 4)
    fg, fi = surrogates.aligner(graphs, images)
    assert np.allclose(np.linalg.norm(fg.data, axis=1), 1.0, atol=1e-5)
    assert np.allclose(np.linalg.norm(fi.data, axis=1), 1.0, atol=1e-5)


def test_same_seed_gives_same_surrogates():
    a = Surrogates(VOCAB, SurrogateConfig(image_size=16, patch_size=4))
    b = Surrogates(VOCAB, SurrogateConfig(image_size=16, patch_size=4))
    assert a.checksum() == b.checksum()


def test_gradient_reaches_soft_node_distribution(surrogates):
    g = connected_graph(np.random.default_rng(0), VOCAB, 3)
    probs = Tensor(np.full((1, VOCAB.num_objects), 1.0 / VOCAB.num_objects), requires_grad=True)
    images = surrogates.synth([g], node_soft=(np.array([1]), probs))
    feats = surrogates.characterizer(images)
    from sgenrich.autodiff import functional as F
    F.sum(feats.hpooled).backward()
    assert probs.grad is not None and np.any(probs.grad != 0)
