"""Transformer building blocks on top of :mod:`dpkg.tensor`."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e9


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


class Init:
    """Seeded parameter factory: N(0, std) weights, zero biases."""

    def __init__(self, seed: int, std: float = 0.02, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.std = std
        self.dtype = dtype

    def normal(self, *shape) -> Tensor:
        return Tensor(self.rng.normal(0.0, self.std, size=shape).astype(self.dtype), requires_grad=True)

    def zeros(self, *shape) -> Tensor:
        return Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

    def ones(self, *shape) -> Tensor:
        return Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, init: Init, d_in: int, d_out: int, bias: bool = True):
        self.weight = init.normal(d_in, d_out)
        self.bias = init.zeros(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add(y, self.bias)


class LayerNorm(Module):
    def __init__(self, init: Init, d: int):
        self.gamma = init.ones(d)
        self.beta = init.zeros(d)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, init: Init, d: int, d_ff: int):
        self.up = Linear(init, d, d_ff)
        self.down = Linear(init, d_ff, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.gelu(self.up(x)))


def attention_bias(key_mask: np.ndarray, n_query: int, causal: bool, dtype) -> np.ndarray:
    """Additive mask of shape (B, 1, Tq, Tk) from a (B, Tk) validity mask."""
    B, Tk = key_mask.shape
    bias = np.where(key_mask[:, None, None, :], 0.0, NEG_INF).astype(dtype)
    if causal:
        future = np.triu(np.ones((n_query, Tk), dtype=bool), k=1)
        bias = bias + np.where(future, NEG_INF, 0.0).astype(dtype)[None, None]
    else:
        bias = np.broadcast_to(bias, (B, 1, n_query, Tk))
    return bias


class MultiHeadAttention(Module):
    # keys carry no bias: it adds a per-row constant to the scores, which softmax ignores
    def __init__(self, init: Init, d: int, n_heads: int):
        if d % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.q = Linear(init, d, d)
        self.k = Linear(init, d, d, bias=False)
        self.v = Linear(init, d, d)
        self.o = Linear(init, d, d)

    def _split(self, x: Tensor) -> Tensor:
        B, L, d = x.shape
        h = self.n_heads
        return T.transpose(T.reshape(x, (B, L, h, d // h)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, memory: Tensor, key_mask: np.ndarray, causal: bool = False) -> Tensor:
        B, Tq, d = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // self.n_heads))
        scores = T.add(scores, attention_bias(key_mask, Tq, causal, x.dtype))
        probs = T.softmax(scores, axis=-1)
        out = T.transpose(T.matmul(probs, v), (0, 2, 1, 3))
        return self.o(T.reshape(out, (B, Tq, d)))


def sinusoidal_positions(n: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


class EncoderLayer(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, init: Init, d: int, n_heads: int, d_ff: int):
        self.ln1 = LayerNorm(init, d)
        self.attn = MultiHeadAttention(init, d, n_heads)
        self.ln2 = LayerNorm(init, d)
        self.ff = FeedForward(init, d, d_ff)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        h = self.ln1(x)
        x = T.add(x, self.attn(h, h, mask))
        return T.add(x, self.ff(self.ln2(x)))


class Encoder(Module):
    """Plain transformer encoder stack over already-embedded inputs."""

    def __init__(self, init: Init, d: int, n_heads: int, d_ff: int, n_layers: int):
        self.layers = [EncoderLayer(init, d, n_heads, d_ff) for _ in range(n_layers)]
        self.ln_f = LayerNorm(init, d)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return self.ln_f(x)
