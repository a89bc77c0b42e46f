"""Expanded three-stream encoder and the answer-aware decoder layer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import NEG_INF, Encoder, FeedForward, Init, LayerNorm, Linear, Module, MultiHeadAttention
from .tensor import Tensor


@dataclass
class EncoderOutput:
    h_doc: Tensor
    h_ans: Tensor
    h_da: Tensor
    doc_mask: np.ndarray
    ans_mask: np.ndarray
    da_mask: np.ndarray


def pack(seqs: list[list[int]], pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists into (B, L) ids and a boolean validity mask."""
    L = max(1, max(len(s) for s in seqs))
    ids = np.full((len(seqs), L), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


class ExpandedEncoder(Module):
    """One shared encoder stack run over doc, answer and doc+answer streams.

    Each stream is its own attention block, so nothing attends across
    streams; the three streams share every weight.
    """

    def __init__(self, init: Init, d: int, n_heads: int, d_ff: int, n_layers: int):
        self.stack = Encoder(init, d, n_heads, d_ff, n_layers)

    def __call__(self, embed, doc: list[list[int]], ans: list[list[int]], pad_id: int) -> EncoderOutput:
        if any(len(s) == 0 for s in doc) or any(len(s) == 0 for s in ans):
            raise ValueError("empty document or answer sequence")
        da = [list(x) + list(y) for x, y in zip(doc, ans)]
        doc_ids, doc_mask = pack(doc, pad_id)
        ans_ids, ans_mask = pack(ans, pad_id)
        da_ids, da_mask = pack(da, pad_id)
        return EncoderOutput(
            h_doc=self.stack(embed(doc_ids), doc_mask),
            h_ans=self.stack(embed(ans_ids), ans_mask),
            h_da=self.stack(embed(da_ids), da_mask),
            doc_mask=doc_mask,
            ans_mask=ans_mask,
            da_mask=da_mask,
        )


def answer_weights(h_doc: Tensor, h_ans: Tensor, ans_mask: np.ndarray | None = None) -> Tensor:
    """Per-document-position affinity to the answer: mean_j (h_doc . h_ans_j) / sqrt(d)."""
    h_doc, h_ans = T.as_tensor(h_doc), T.as_tensor(h_ans)
    d = h_doc.shape[-1]
    if h_ans.shape[-1] != d:
        raise ValueError(f"hidden size mismatch: {d} vs {h_ans.shape[-1]}")
    swap = tuple(range(h_ans.ndim - 2)) + (h_ans.ndim - 1, h_ans.ndim - 2)
    scores = T.scale(T.matmul(h_doc, T.transpose(h_ans, swap)), 1.0 / math.sqrt(d))
    mask = None
    if ans_mask is not None:
        mask = np.broadcast_to(np.expand_dims(ans_mask, -2), scores.shape)
    return T.mean_pool(scores, axis=-1, mask=mask)


def answer_aware_attention(
    h_prev: Tensor,
    h_doc: Tensor,
    k_weight: Tensor,
    doc_mask: np.ndarray | None = None,
    kweight_softmax: bool = False,
    return_weights: bool = False,
):
    """softmax((h_prev h_doc^T / sqrt(d)) * k_weight) h_doc, k_weight broadcast over rows."""
    h_prev, h_doc, k_weight = T.as_tensor(h_prev), T.as_tensor(h_doc), T.as_tensor(k_weight)
    d = h_doc.shape[-1]
    L = h_doc.shape[-2]
    if k_weight.shape[-1] != L:
        raise ValueError(f"k_weight length {k_weight.shape[-1]} does not match document length {L}")
    if kweight_softmax:
        kw = k_weight
        if doc_mask is not None:
            kw = T.add(kw, np.where(doc_mask, 0.0, NEG_INF).astype(h_doc.dtype))
        k_weight = T.softmax(kw, axis=-1)
    swap = tuple(range(h_doc.ndim - 2)) + (h_doc.ndim - 1, h_doc.ndim - 2)
    scores = T.scale(T.matmul(h_prev, T.transpose(h_doc, swap)), 1.0 / math.sqrt(d))
    scores = T.mul(scores, T.reshape(k_weight, k_weight.shape[:-1] + (1, L)))
    if doc_mask is not None:
        bias = np.where(doc_mask, 0.0, NEG_INF).astype(h_doc.dtype)
        scores = T.add(scores, bias.reshape(bias.shape[:-1] + (1, L)))
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, h_doc)
    return (out, weights) if return_weights else out


class FusionGate(Module):
    """gate = sigmoid(W [h_a; h_h] + b); out = gate*h_a + (1-gate)*h_h."""

    def __init__(self, init: Init, d: int):
        self.proj = Linear(init, 2 * d, d)

    def __call__(self, h_a: Tensor, h_h: Tensor) -> Tensor:
        return fuse(h_a, h_h, self.proj.weight, self.proj.bias)


def fuse(h_a: Tensor, h_h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    h_a, h_h = T.as_tensor(h_a), T.as_tensor(h_h)
    if h_a.shape != h_h.shape:
        raise ValueError(f"shape mismatch: {h_a.shape} vs {h_h.shape}")
    gate = T.sigmoid(T.add(T.matmul(T.concat([h_a, h_h], axis=-1), weight), bias))
    # h_h + gate*(h_a - h_h) keeps equal inputs exact
    out = T.add(h_h, T.mul(gate, T.add(h_a, T.neg(h_h))))
    # rounding can land one ulp outside the convex hull; clamp (gradient passes straight through)
    np.clip(out.data, np.minimum(h_a.data, h_h.data), np.maximum(h_a.data, h_h.data), out=out.data)
    return out


class AnswerAwareDecoderLayer(Module):
    """Causal self-attn -> (cross-attn || answer-aware attn) -> fusion -> FFN."""

    def __init__(self, init: Init, d: int, n_heads: int, d_ff: int, use_aa: bool = True,
                 kweight_softmax: bool = False):
        self.use_aa = use_aa
        self.kweight_softmax = kweight_softmax
        self.ln_self = LayerNorm(init, d)
        self.self_attn = MultiHeadAttention(init, d, n_heads)
        self.ln_cross = LayerNorm(init, d)
        self.cross_attn = MultiHeadAttention(init, d, n_heads)
        self.gate = FusionGate(init, d) if use_aa else None
        self.ln_ff = LayerNorm(init, d)
        self.ff = FeedForward(init, d, d_ff)

    def __call__(self, x: Tensor, tgt_mask: np.ndarray, enc: EncoderOutput, k_weight: Tensor,
                 memory: Tensor, memory_mask: np.ndarray) -> Tensor:
        h = self.ln_self(x)
        h_s = T.add(x, self.self_attn(h, h, tgt_mask, causal=True))
        q = self.ln_cross(h_s)
        h_h = self.cross_attn(q, memory, memory_mask)
        if self.use_aa:
            h_a = answer_aware_attention(q, enc.h_doc, k_weight, enc.doc_mask, self.kweight_softmax)
            h_h = self.gate(h_a, h_h)
        x = T.add(h_s, h_h)
        return T.add(x, self.ff(self.ln_ff(x)))


class AnswerAwareDecoder(Module):
    def __init__(self, init: Init, d: int, n_heads: int, d_ff: int, n_layers: int, use_aa: bool = True,
                 kweight_softmax: bool = False):
        self.layers = [AnswerAwareDecoderLayer(init, d, n_heads, d_ff, use_aa, kweight_softmax)
                       for _ in range(n_layers)]
        self.ln_f = LayerNorm(init, d)

    def __call__(self, x: Tensor, tgt_mask: np.ndarray, enc: EncoderOutput, k_weight: Tensor,
                 memory: Tensor, memory_mask: np.ndarray) -> Tensor:
        for layer in self.layers:
            x = layer(x, tgt_mask, enc, k_weight, memory, memory_mask)
        return self.ln_f(x)


def decoder_layer_forward(prev_states: Tensor, enc: EncoderOutput, memory: Tensor,
                          layer: AnswerAwareDecoderLayer, memory_mask: np.ndarray | None = None,
                          tgt_mask: np.ndarray | None = None) -> Tensor:
    """Run one decoder layer; answer weights are derived from ``enc``."""
    B, L = prev_states.shape[:2]
    if tgt_mask is None:
        tgt_mask = np.ones((B, L), dtype=bool)
    if memory_mask is None:
        memory_mask = np.ones(memory.shape[:2], dtype=bool)
    kw = answer_weights(enc.h_doc, enc.h_ans, enc.ans_mask)
    return layer(prev_states, tgt_mask, enc, kw, memory, memory_mask)
