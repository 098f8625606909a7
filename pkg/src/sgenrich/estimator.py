"""scikit-learn style wrapper around training and enrichment."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .enricher import EnrichOptions, enrich_iterative
from .graph import SceneGraph, SceneGraphError, Vocabulary, validate
from .training import Trainer, make_examples


def check_vocabulary(vocab):
    if not isinstance(vocab, Vocabulary):
        raise TypeError(f"expected a Vocabulary, got {type(vocab).__name__}")
    return vocab


def check_graphs(graphs, vocab, min_nodes=1):
    """Validate a non-empty sequence of scene graphs against ``vocab``; returns a list."""
    if isinstance(graphs, SceneGraph):
        raise TypeError("expected a sequence of SceneGraph, got a single graph")
    graphs = list(graphs)
    if not graphs:
        raise ValueError("expected at least one scene graph")
    for i, g in enumerate(graphs):
        if not isinstance(g, SceneGraph):
            raise TypeError(f"item {i} is {type(g).__name__}, not SceneGraph")
        errors = validate(g, vocab)
        if errors:
            raise SceneGraphError(f"graph {i}: {'; '.join(errors)}")
        if g.num_nodes < min_nodes:
            raise SceneGraphError(f"graph {i} has {g.num_nodes} node(s); at least {min_nodes} required")
        if vocab.image in g.objects or vocab.unknown_obj in g.objects:
            raise SceneGraphError(f"graph {i} contains a special object category")
    return graphs


class SceneGraphEnricher(BaseEstimator):
    """Learns to add objects, edges and predicates to scene graphs.

    ``fit`` trains the enricher adversarially on a list of graphs;
    ``transform`` returns the graphs after ``steps`` enrichment rounds and
    ``predict`` the first enriching object category per graph.

    Parameters
    ----------
    vocabulary : Vocabulary
        Category tables the graphs index into.
    config : RunConfig, optional
        Training hyperparameters; defaults to ``RunConfig()``.
    validation_fraction : float
        Share of the fitted graphs held out for early stopping.
    steps, threshold, max_edges, forced_novel, temperature, seed
        Enrichment options used by ``transform`` and ``predict``.
    """

    def __init__(self, vocabulary=None, config=None, validation_fraction=0.1, steps=1, threshold=0.5,
                 max_edges=8, forced_novel=False, temperature=0.0, seed=0):
        self.vocabulary = vocabulary
        self.config = config
        self.validation_fraction = validation_fraction
        self.steps = steps
        self.threshold = threshold
        self.max_edges = max_edges
        self.forced_novel = forced_novel
        self.temperature = temperature
        self.seed = seed

    def _options(self):
        return EnrichOptions(self.threshold, self.max_edges, self.steps, self.forced_novel, self.temperature,
                             self.seed)

    def fit(self, X, y=None, training_steps=None):
        vocab = check_vocabulary(self.vocabulary)
        graphs = check_graphs(X, vocab)
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        self._options()
        config = self.config or RunConfig()
        order = np.random.default_rng(self.seed).permutation(len(graphs))
        n_val = int(round(self.validation_fraction * len(graphs)))
        val = [graphs[i] for i in order[:n_val]]
        train = [graphs[i] for i in order[n_val:]]
        self.trainer_ = Trainer(config, vocab, train, val)
        self.history_ = self.trainer_.fit(training_steps)
        self.model_ = self.trainer_.generator
        self.vocabulary_ = vocab
        return self

    def transform(self, X):
        """Enriched copy of every graph after ``steps`` rounds."""
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.vocabulary_)
        options = self._options()
        return [enrich_iterative(self.model_, g, options=options)[-1].graph for g in graphs]

    def enrichment_steps(self, graph):
        check_is_fitted(self, "model_")
        (graph,) = check_graphs([graph], self.vocabulary_)
        return enrich_iterative(self.model_, graph, options=self._options())

    def predict(self, X):
        """Category index of the first enriching object for each graph."""
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.vocabulary_)
        options = EnrichOptions(self.threshold, self.max_edges, 1, self.forced_novel, self.temperature, self.seed)
        return np.array([enrich_iterative(self.model_, g, options=options)[0].obj for g in graphs])

    def evaluate(self, X):
        """Metric report on held-out eliminations built from ``X``."""
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.vocabulary_, min_nodes=2)
        return self.trainer_.evaluate(make_examples(graphs, self.vocabulary_, [self.seed, 9]))

    def score(self, X, y=None):
        """Object-prediction accuracy on held-out eliminations."""
        return self.evaluate(X).objs_acc
