"""Network building blocks: linear layers, layer norm, MLPs.

Every module exposes two forward paths with identical float32 arithmetic:
``__call__`` builds the autodiff graph for training, ``forward_np`` runs
tape-free on plain ndarrays for inference-only uses (replay targets, action
collection, batched evaluation).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, layer_norm, layer_norm_np


def xavier_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class Linear:
    def __init__(self, in_dim, out_dim, rng, name="linear"):
        self.name = name
        self.w = Tensor(xavier_uniform(rng, in_dim, out_dim), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.data + self.b.data

    def parameters(self):
        return [(self.name + ".w", self.w), (self.name + ".b", self.b)]


class LayerNorm:
    def __init__(self, dim, name="ln"):
        self.name = name
        self.gain = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        return layer_norm_np(x, self.gain.data, self.bias.data)

    def parameters(self):
        return [(self.name + ".gain", self.gain), (self.name + ".bias", self.bias)]


class MLP:
    """Stack of Linear -> LayerNorm -> ReLU blocks, optional trailing linear head.

    ``hidden`` gives the widths of the hidden layers; when ``out_dim`` is
    None the caller attaches its own heads to the last hidden activation.
    """

    def __init__(self, in_dim, hidden, out_dim, rng, name="mlp", use_layer_norm=True):
        self.name = name
        self.blocks = []
        d = in_dim
        for i, h in enumerate(hidden):
            lin = Linear(d, h, rng, name=f"{name}.l{i}")
            ln = LayerNorm(h, name=f"{name}.ln{i}") if use_layer_norm else None
            self.blocks.append((lin, ln))
            d = h
        self.head = Linear(d, out_dim, rng, name=f"{name}.head") if out_dim is not None else None

    def __call__(self, x: Tensor) -> Tensor:
        for lin, ln in self.blocks:
            x = lin(x)
            if ln is not None:
                x = ln(x)
            x = x.relu()
        if self.head is not None:
            x = self.head(x)
        return x

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        for lin, ln in self.blocks:
            x = lin.forward_np(x)
            if ln is not None:
                x = ln.forward_np(x)
            x = np.maximum(x, 0)
        if self.head is not None:
            x = self.head.forward_np(x)
        return x

    def parameters(self):
        out = []
        for lin, ln in self.blocks:
            out.extend(lin.parameters())
            if ln is not None:
                out.extend(ln.parameters())
        if self.head is not None:
            out.extend(self.head.parameters())
        return out


def zero_grads(params):
    for _, p in params:
        p.grad = None


def copy_params(src, dst):
    """Copy parameter values src -> dst (matching order and shapes)."""
    for (_, ps), (_, pd) in zip(src, dst):
        if ps.data.shape != pd.data.shape:
            raise ValueError("parameter shape mismatch in copy_params")
        pd.data = ps.data.copy()


def polyak_update(online, target, tau):
    """target <- tau * online + (1 - tau) * target, in place."""
    for (_, po), (_, pt) in zip(online, target):
        pt.data *= 1.0 - tau
        pt.data += tau * po.data


def params_hash(params):
    """Stable hash of parameter bytes; used to prove parameters untouched."""
    import hashlib

    h = hashlib.sha256()
    for name, p in params:
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data, dtype=np.float32).tobytes())
    return h.hexdigest()
