"""Minimal transformer blocks on the autodiff record.

Pre-norm residual layers, standard scaled dot-product attention, and
sinusoidal positional embeddings, sized for desk-scale sequence models.
"""

from __future__ import annotations

import numpy as np

from ..diffmath import (
    Tensor, add, bmm, matmul, mul, relu, reshape, softmax, sqrt, sub,
    tmean, transpose,
)


class Linear:
    """Dense layer applied to the last axis of any-rank input."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        bound = np.sqrt(6.0 / (d_in + d_out))
        self.w = Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)),
                        requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        shape = x.shape
        flat = reshape(x, (-1, shape[-1])) if x.ndim != 2 else x
        out = add(matmul(flat, self.w), self.b)
        if x.ndim != 2:
            out = reshape(out, shape[:-1] + (self.w.shape[1],))
        return out

    def parameters(self):
        return [self.w, self.b]


class LayerNorm:
    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mean = tmean(x, axis=-1, keepdims=True)
        centered = sub(x, mean)
        var = tmean(mul(centered, centered), axis=-1, keepdims=True)
        normed = centered / sqrt(var + 1e-6)
        return add(mul(normed, self.gamma), self.beta)

    def parameters(self):
        return [self.gamma, self.beta]


class MultiHeadAttention:
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        assert d_model % heads == 0
        self.heads = heads
        self.d_head = d_model // heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return transpose(reshape(x, (b, length, self.heads, self.d_head)),
                         (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor) -> Tensor:
        b, lq, d = query.shape
        q = self._split(self.q(query))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = bmm(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.d_head))
        attn = softmax(scores, axis=-1)
        mixed = bmm(attn, v)
        merged = reshape(transpose(mixed, (0, 2, 1, 3)), (b, lq, d))
        return self.o(merged)

    def parameters(self):
        return (self.q.parameters() + self.k.parameters()
                + self.v.parameters() + self.o.parameters())


class FeedForward:
    def __init__(self, d_model: int, d_hidden: int, rng: np.random.Generator):
        self.inner = Linear(d_model, d_hidden, rng)
        self.outer = Linear(d_hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(relu(self.inner(x)))

    def parameters(self):
        return self.inner.parameters() + self.outer.parameters()


class EncoderLayer:
    def __init__(self, d_model: int, heads: int, d_hidden: int,
                 rng: np.random.Generator):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = add(x, self.attn(h, h))
        return add(x, self.ffn(self.norm2(x)))

    def parameters(self):
        return (self.norm1.parameters() + self.attn.parameters()
                + self.norm2.parameters() + self.ffn.parameters())


class DecoderLayer:
    def __init__(self, d_model: int, heads: int, d_hidden: int,
                 rng: np.random.Generator):
        self.norm1 = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads, rng)
        self.norm2 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads, rng)
        self.norm3 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_hidden, rng)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        h = self.norm1(x)
        x = add(x, self.self_attn(h, h))
        x = add(x, self.cross_attn(self.norm2(x), memory))
        return add(x, self.ffn(self.norm3(x)))

    def parameters(self):
        return (self.norm1.parameters() + self.self_attn.parameters()
                + self.norm2.parameters() + self.cross_attn.parameters()
                + self.norm3.parameters() + self.ffn.parameters())


def sinusoidal_embedding(length: int, dim: int) -> np.ndarray:
    """Classic fixed positional table of shape (length, dim)."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    out = np.empty((length, dim))
    out[:, 0::2] = np.sin(angles[:, 0::2])
    out[:, 1::2] = np.cos(angles[:, 1::2])
    return out
