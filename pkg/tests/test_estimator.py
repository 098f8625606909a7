import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from helpers import tiny_config
from sgenrich import SceneGraphEnricher
from sgenrich.corpus import default_grammar, generate_synthetic
from sgenrich.graph import SceneGraph, SceneGraphError


@pytest.fixture(scope="module")
def fitted():
    grammar = default_grammar()
    vocab = grammar.vocabulary()
    graphs = generate_synthetic(grammar, 30, 0)
    est = SceneGraphEnricher(vocabulary=vocab, config=tiny_config(w_scene=0.0), steps=2).fit(graphs)
    return est, vocab, graphs


def test_params_clone_and_repr():
    est = SceneGraphEnricher(steps=3, threshold=0.4)
    params = est.get_params()
    assert params["steps"] == 3 and params["threshold"] == 0.4
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert "steps=3" in repr(est)


def test_unfitted_estimator_refuses_to_predict():
    with pytest.raises(NotFittedError):
        SceneGraphEnricher().predict([SceneGraph([2])])


def test_fit_transform_predict_score(fitted):
    est, vocab, graphs = fitted
    assert len(est.history_) == 2
    out = est.transform(graphs[:3])
    assert [g.num_nodes for g in out] == [g.num_nodes + 2 for g in graphs[:3]]
    pred = est.predict(graphs[:3])
    assert pred.shape == (3,) and all(p in vocab.real_objects for p in pred)
    assert 0.0 <= est.score(graphs[:5]) <= 1.0
    assert len(est.enrichment_steps(graphs[0])) == 2


def test_inputs_are_checked(fitted):
    est, vocab, graphs = fitted
    with pytest.raises(TypeError):
        est.transform(graphs[0])
    with pytest.raises(ValueError):
        est.transform([])
    with pytest.raises(SceneGraphError):
        est.transform([SceneGraph([vocab.image])])
    with pytest.raises(TypeError):
        SceneGraphEnricher(vocabulary="words").fit(graphs)
    with pytest.raises(ValueError):
        SceneGraphEnricher(vocabulary=vocab, validation_fraction=1.0).fit(graphs)
