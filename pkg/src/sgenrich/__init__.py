"""Scene-graph enrichment: a numpy GCN enricher trained against a graph critic and frozen surrogates."""
from .config import ConfigError, RunConfig, emit_config, load_config, parse_config
from .corpus import CorpusConfig, SceneGrammar, default_grammar, generate_synthetic, ingest_vg
from .critic import CriticModel, local_subgraph
from .enricher import EnricherModel, EnrichOptions, enrich_iterative, enrich_once
from .estimator import SceneGraphEnricher
from .gcn import GConvLayer, GcnStack
from .graph import SceneGraph, SceneGraphError, Vocabulary, deserialize, serialize, validate
from .metrics import MetricReport, evaluate, oracle_evaluate
from .surrogates import Surrogates, SurrogateConfig
from .training import Trainer, load_generator, make_example

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CorpusConfig", "CriticModel", "EnrichOptions", "EnricherModel", "GConvLayer", "GcnStack",
    "MetricReport", "RunConfig", "SceneGrammar", "SceneGraph", "SceneGraphEnricher", "SceneGraphError",
    "SurrogateConfig", "Surrogates", "Trainer", "Vocabulary", "default_grammar", "deserialize", "emit_config",
    "enrich_iterative", "enrich_once", "evaluate", "generate_synthetic", "ingest_vg", "load_config",
    "load_generator", "local_subgraph", "make_example", "oracle_evaluate", "parse_config", "serialize",
    "validate",
]
