from __future__ import annotations

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


def global_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            flat = p.grad.ravel()
            total += float(np.dot(flat, flat))
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(params)
    if np.isfinite(norm) and norm > max_norm > 0:
        factor = max_norm / (norm + 1e-6)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm


class Adam:
    """Adam with bias correction over a list of named parameters."""

    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.named = list(named_params)
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named}

    @property
    def params(self):
        return [p for _, p in self.named]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        bad = [name for name, p in self.named if p.grad is not None and not np.all(np.isfinite(p.grad))]
        if bad:
            raise NonFiniteGradientError(f"non-finite gradient in {bad[:5]}; step aborted")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / c1
        for name, p in self.named:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            sq = np.square(g)
            sq *= 1.0 - self.beta2
            v += sq
            denom = np.sqrt(v / c2)
            denom += self.eps
            update = np.divide(m, denom, out=denom)
            update *= step_size
            p.data = (p.data - update).astype(p.dtype, copy=False)

    def state_dict(self):
        state = {"t": np.array([self.t], dtype=np.float32)}
        for name, _ in self.named:
            state[f"m/{name}"] = self.m[name]
            state[f"v/{name}"] = self.v[name]
        return state

    def load_state_dict(self, state):
        self.t = int(state["t"][0])
        for name, p in self.named:
            self.m[name] = np.asarray(state[f"m/{name}"], dtype=p.dtype).copy()
            self.v[name] = np.asarray(state[f"v/{name}"], dtype=p.dtype).copy()
