"""Run configuration: sectioned key=value files with validated hyperparameter domains."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace

from .gcn import DISCRIMINATOR_ARCHITECTURES, GENERATOR_ARCHITECTURES, layer_widths, parse_architecture
from .losses import SCENE_MODES, LossWeights
from .surrogates import SURROGATE_SEED, SurrogateConfig

ACTIVATION_CHOICES = ("relu", "leakyrelu", "prelu")
NORM_CHOICES = ("none", "batch", "layer")
PRED_EDGE_CHOICES = ("gt", "gt+predicted")

# searched hyperparameter domains
DOMAINS = {
    "batch_size": (32, 64, 128),
    "gconv_dropout": (0.0, 0.05, 0.1, 0.15, 0.25, 0.5),
    "gen_embed_dim": (16, 32, 64, 128, 256),
    "gen_classifier_layers": (1, 2, 4),
    "gen_edge_layers": (2, 4),
    "gen_fc_dropout": (0.1, 0.25, 0.5),
    "disc_embed_dim": (16, 32, 64, 128, 256),
    "disc_update_every": (1, 5, 10, 50, 100, 200, 500, 1000, 2000),
}


class ConfigError(ValueError):
    pass


def _meta(section, **kw):
    return {"section": section, **kw}


@dataclass(frozen=True)
class RunConfig:
    """Every trainable-run knob.  Defaults reproduce the best reported run."""

    batch_size: int = field(default=32, metadata=_meta("data"))

    gconv_dropout: float = field(default=0.1, metadata=_meta("gconv", key="dropout"))
    gconv_norm: str = field(default="none", metadata=_meta("gconv", key="norm"))
    gconv_activation: str = field(default="leakyrelu", metadata=_meta("gconv", key="activation"))

    w_obj: float = field(default=1000.0, metadata=_meta("loss"))
    w_edges: float = field(default=1.0, metadata=_meta("loss"))
    w_gan: float = field(default=0.1, metadata=_meta("loss"))
    w_pred_avail: float = field(default=100.0, metadata=_meta("loss"))
    w_pred_not_avail: float = field(default=0.1, metadata=_meta("loss"))
    w_scene: float = field(default=200.0, metadata=_meta("loss"))
    w_im_sg: float = field(default=0.0, metadata=_meta("loss"))
    scene_mode: str = field(default="hpooled_l1", metadata=_meta("loss"))

    gen_embed_dim: int = field(default=256, metadata=_meta("generator", key="embed_dim"))
    gen_architecture: str = field(default="a", metadata=_meta("generator", key="architecture"))
    gen_fc_dropout: float = field(default=0.1, metadata=_meta("generator", key="fc_dropout"))
    gen_fc_norm: str = field(default="batch", metadata=_meta("generator", key="fc_norm"))
    gen_fc_activation: str = field(default="leakyrelu", metadata=_meta("generator", key="fc_activation"))
    gen_classifier_layers: int = field(default=2, metadata=_meta("generator", key="classifier_layers"))
    gen_edge_layers: int = field(default=2, metadata=_meta("generator", key="edge_layers"))

    disc_embed_dim: int = field(default=16, metadata=_meta("discriminator", key="embed_dim"))
    disc_architecture: str = field(default="b", metadata=_meta("discriminator", key="architecture"))
    disc_update_every: int = field(default=200, metadata=_meta("discriminator", key="update_every"))
    disc_saturating: bool = field(default=False, metadata=_meta("discriminator", key="saturating"))

    lr: float = field(default=1e-4, metadata=_meta("optim"))
    beta1: float = field(default=0.9, metadata=_meta("optim"))
    beta2: float = field(default=0.999, metadata=_meta("optim"))
    clip_norm: float = field(default=5.0, metadata=_meta("optim"))

    steps: int = field(default=5000, metadata=_meta("train"))
    eval_interval: int = field(default=250, metadata=_meta("train"))
    checkpoint_interval: int = field(default=500, metadata=_meta("train"))
    patience: int = field(default=10, metadata=_meta("train"))
    pred_edges: str = field(default="gt", metadata=_meta("train"))
    seed: int = field(default=0, metadata=_meta("train"))
    strict_domains: bool = field(default=True, metadata=_meta("train"))

    threshold: float = field(default=0.5, metadata=_meta("enrich"))
    max_edges: int = field(default=8, metadata=_meta("enrich"))

    image_size: int = field(default=32, metadata=_meta("surrogate"))
    scene_classes: int = field(default=16, metadata=_meta("surrogate"))
    surrogate_seed: int = field(default=SURROGATE_SEED, metadata=_meta("surrogate", key="seed"))

    def __post_init__(self):
        validate_config(self)

    @property
    def loss_weights(self):
        return LossWeights(self.w_obj, self.w_edges, self.w_gan, self.w_pred_avail, self.w_pred_not_avail,
                           self.w_scene, self.w_im_sg, self.scene_mode)

    @property
    def surrogate_config(self):
        return SurrogateConfig(image_size=self.image_size, scene_classes=self.scene_classes,
                               seed=self.surrogate_seed)

    def generator_kwargs(self):
        return dict(embed_dim=self.gen_embed_dim, architecture=self.gen_architecture,
                    gconv_activation=self.gconv_activation, gconv_norm=self.gconv_norm,
                    gconv_dropout=self.gconv_dropout, fc_activation=self.gen_fc_activation,
                    fc_norm=self.gen_fc_norm, fc_dropout=self.gen_fc_dropout,
                    classifier_layers=self.gen_classifier_layers, edge_layers=self.gen_edge_layers)

    def critic_kwargs(self):
        return dict(embed_dim=self.disc_embed_dim, architecture=self.disc_architecture,
                    gconv_activation=self.gconv_activation, gconv_norm=self.gconv_norm,
                    gconv_dropout=self.gconv_dropout, fc_activation=self.gen_fc_activation,
                    fc_norm=self.gen_fc_norm, fc_dropout=self.gen_fc_dropout)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _key(f):
    return f.metadata.get("key", f.name)


def _check(cond, message):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg):
    _check(cfg.gconv_norm in NORM_CHOICES, f"gconv norm must be one of {NORM_CHOICES}")
    _check(cfg.gen_fc_norm in NORM_CHOICES, f"generator fc_norm must be one of {NORM_CHOICES}")
    for name in ("gconv_activation", "gen_fc_activation"):
        _check(getattr(cfg, name) in ACTIVATION_CHOICES, f"{name} must be one of {ACTIVATION_CHOICES}")
    _check(cfg.scene_mode in SCENE_MODES, f"scene_mode must be one of {SCENE_MODES}")
    _check(cfg.pred_edges in PRED_EDGE_CHOICES, f"pred_edges must be one of {PRED_EDGE_CHOICES}")
    for name in ("w_obj", "w_edges", "w_gan", "w_pred_avail", "w_pred_not_avail", "w_scene", "w_im_sg"):
        _check(getattr(cfg, name) >= 0, f"{name} must be non-negative")
    for name in ("batch_size", "gen_embed_dim", "disc_embed_dim", "disc_update_every", "steps", "eval_interval",
                 "checkpoint_interval", "patience", "max_edges", "gen_classifier_layers", "gen_edge_layers",
                 "image_size", "scene_classes"):
        _check(getattr(cfg, name) >= 1, f"{name} must be at least 1")
    _check(0 <= cfg.gconv_dropout < 1 and 0 <= cfg.gen_fc_dropout < 1, "dropout must lie in [0, 1)")
    _check(cfg.lr > 0 and cfg.clip_norm > 0, "lr and clip_norm must be positive")
    _check(0 <= cfg.beta1 < 1 and 0 <= cfg.beta2 < 1, "Adam betas must lie in [0, 1)")
    _check(0 < cfg.threshold < 1, "threshold must lie in (0, 1)")
    try:
        layer_widths(parse_architecture(cfg.gen_architecture, GENERATOR_ARCHITECTURES), cfg.gen_embed_dim)
        disc = parse_architecture(cfg.disc_architecture, DISCRIMINATOR_ARCHITECTURES)
        layer_widths(disc, cfg.disc_embed_dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _check(len(disc) >= 4, "discriminator architecture needs at least three GConv layers")
    if cfg.strict_domains:
        for name, allowed in DOMAINS.items():
            _check(getattr(cfg, name) in allowed, f"{name}={getattr(cfg, name)!r} outside searched domain {allowed}")


def _parse_value(f, text):
    text = text.strip()
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{f.metadata['section']}.{_key(f)}: cannot parse {text!r} as {kind}") from None
    return text


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _field_map():
    return {(f.metadata["section"], _key(f)): f for f in fields(RunConfig)}


def parse_config(text, overrides=None):
    """Parse INI text into a :class:`RunConfig`; ``overrides`` maps ``section.key`` to strings."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    known = _field_map()
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            f = known.get((section, key))
            if f is None:
                raise ConfigError(f"unknown config key {section}.{key}")
            values[f.name] = _parse_value(f, raw)
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        f = known.get((section, key))
        if f is None:
            raise ConfigError(f"unknown config key {dotted}")
        values[f.name] = _parse_value(f, str(raw))
    return RunConfig(**values)


def emit_config(cfg):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for f in fields(RunConfig):
        section = f.metadata["section"]
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, _key(f), _format_value(getattr(cfg, f.name)))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), overrides)


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))
