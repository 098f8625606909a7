"""Minimal module system: named parameters, train/eval flags, common layers."""
from __future__ import annotations

import hashlib

import numpy as np

from . import functional as F
from .tensor import Tensor, default_dtype

ACTIVATIONS = ("relu", "leakyrelu", "prelu")
NORMS = ("none", "batch", "layer")


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Attribute-walking container; parameter names are dotted attribute paths."""

    training = True

    def named_children(self):
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
        for key, child in self.named_children():
            yield from child.named_parameters(prefix + key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for key in getattr(self, "_buffers", ()):
            yield prefix + key, getattr(self, key)
        for key, child in self.named_children():
            yield from child.named_buffers(prefix + key + ".")

    def modules(self):
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = [k for k in list(own) + list(buffers) if k not in state]
        unexpected = [k for k in state if k not in own and k not in buffers]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            if name in state:
                value = np.asarray(state[name])
                if value.shape != p.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
                p.data = value.astype(p.dtype)
        for name, b in buffers.items():
            if name in state:
                b[...] = state[name]

    def checksum(self):
        """Digest over parameter names and values (buffers excluded)."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class RngStream:
    """Counter-based dropout randomness keyed by (seed, layer id, step, call)."""

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.step = 0
        self._calls = {}

    def set_step(self, step):
        if step != self.step:
            self.step = int(step)
            self._calls.clear()

    def generator(self, layer_id):
        call = self._calls.get(layer_id, 0)
        self._calls[layer_id] = call + 1
        return np.random.default_rng([self.seed, layer_id, self.step, call])


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        bound = 1.0 / np.sqrt(d_in)
        dtype = default_dtype()
        self.weight = Parameter(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype))
        self.bias = Parameter(rng.uniform(-bound, bound, size=(d_out,)).astype(dtype)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def forward(self, x):
        y = F.matmul(x, self.weight)
        if self.bias is not None:
            y = F.add(y, self.bias)
        return y


class Embedding(Module):
    """Bias-free linear map from one-hot (or soft) category vectors."""

    def __init__(self, num_categories, dim, rng):
        bound = 1.0 / np.sqrt(num_categories)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(num_categories, dim)).astype(default_dtype()))
        self.num_categories = num_categories

    def forward(self, indices, soft_rows=None, soft_probs=None):
        """Embed category ``indices``; rows in ``soft_rows`` use ``soft_probs @ W`` instead."""
        indices = np.asarray(indices, dtype=np.int64)
        if len(indices) and (indices.min() < 0 or indices.max() >= self.num_categories):
            raise IndexError(f"category index outside [0, {self.num_categories})")
        out = F.take_rows(self.weight, indices)
        if soft_rows is not None and len(soft_rows):
            out = F.scatter_rows(out, soft_rows, F.matmul(soft_probs, self.weight))
        return out


class Norm(Module):
    def __init__(self, kind, dim):
        if kind not in NORMS:
            raise ValueError(f"normalization must be one of {NORMS}, got {kind!r}")
        self.kind = kind
        dtype = default_dtype()
        if kind != "none":
            self.gamma = Parameter(np.ones(dim, dtype=dtype))
            self.beta = Parameter(np.zeros(dim, dtype=dtype))
        if kind == "batch":
            self.running_mean = np.zeros(dim, dtype=dtype)
            self.running_var = np.ones(dim, dtype=dtype)
            self._buffers = ("running_mean", "running_var")

    def forward(self, x):
        if self.kind == "batch":
            return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.training)
        if self.kind == "layer":
            return F.layer_norm(x, self.gamma, self.beta)
        return x


class Activation(Module):
    def __init__(self, kind, leaky_slope=0.2, prelu_init=0.25):
        kind = kind.lower().replace("_", "")
        if kind not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {kind!r}")
        self.kind = kind
        self.slope = leaky_slope
        if kind == "prelu":
            self.alpha = Parameter(np.full((1,), prelu_init, dtype=default_dtype()))

    def forward(self, x):
        if self.kind == "relu":
            return F.relu(x)
        if self.kind == "leakyrelu":
            return F.leaky_relu(x, self.slope)
        return F.prelu(x, self.alpha)


class Dropout(Module):
    def __init__(self, p, layer_id, stream):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p
        self.layer_id = layer_id
        self.stream = stream

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        return F.dropout(x, self.p, True, self.stream.generator(self.layer_id))


class LayerFactory:
    """Hands out initialisation randomness and unique dropout layer ids."""

    def __init__(self, rng, stream):
        self.rng = rng
        self.stream = stream
        self._next_id = 0

    def dropout(self, p):
        self._next_id += 1
        return Dropout(p, self._next_id, self.stream)


class MLP(Module):
    """Affine layers; hidden ones get norm -> activation -> dropout.

    ``final_activation`` also activates the last affine output (no norm or
    dropout there).
    """

    def __init__(self, widths, factory, activation="leakyrelu", norm="none", dropout=0.0,
                 final_activation=False):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.linears = [Linear(a, b, factory.rng) for a, b in zip(widths[:-1], widths[1:])]
        hidden = widths[1:-1]
        self.norms = [Norm(norm, w) for w in hidden]
        self.acts = [Activation(activation) for _ in hidden]
        self.drops = [factory.dropout(dropout) for _ in hidden]
        self.final_act = Activation(activation) if final_activation else None

    def forward(self, x):
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < len(self.norms):
                x = self.drops[i](self.acts[i](self.norms[i](x)))
        if self.final_act is not None:
            x = self.final_act(x)
        return x
