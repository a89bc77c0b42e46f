"""Keyword + question generation network and decoding."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .net import AnswerAwareDecoder, EncoderOutput, ExpandedEncoder, answer_weights, pack
from .nn import Encoder, Init, Module, sinusoidal_positions
from .tensor import Tensor
from .text import DOC, QES, TokenSeq, Vocab, tokenize

log = logging.getLogger(__name__)

MODES = ("hard", "soft")


class MalformedKeywords(ValueError):
    pass


@dataclass
class KeywordSet:
    question: list[str] = field(default_factory=list)
    document: list[str] = field(default_factory=list)

    def __post_init__(self):
        for role in (self.question, self.document):
            if any(not k.strip() for k in role):
                raise ValueError("empty keyword")
            if len(set(role)) != len(role):
                raise ValueError("duplicate keyword")

    def to_dict(self) -> dict:
        return {"question": list(self.question), "document": list(self.document)}

    @classmethod
    def from_dict(cls, d: dict) -> "KeywordSet":
        return cls(list(d.get("question", [])), list(d.get("document", [])))


def format_keywords(ks: KeywordSet, mode: str) -> str:
    """Serialize keywords: hard mode marks roles with <qes>/<doc>."""
    if mode == "hard":
        return " ".join([QES, *ks.question, DOC, *ks.document])
    if mode == "soft":
        return " ".join([*ks.question, *ks.document])
    raise ValueError(f"unknown mode {mode!r}")


def parse_keywords(seq: str | Sequence[str], mode: str) -> KeywordSet:
    """Recover a keyword set from a serialized sequence.

    Formatting drops phrase boundaries, so keywords come back one per
    token (duplicates removed).  Soft mode cannot tell roles apart and
    returns everything as question candidates.
    """
    toks = seq.split() if isinstance(seq, str) else list(seq)
    if mode == "soft":
        return KeywordSet(_dedup([t for t in toks if t not in (QES, DOC)]), [])
    if mode != "hard":
        raise ValueError(f"unknown mode {mode!r}")
    if QES not in toks or DOC not in toks:
        raise MalformedKeywords("malformed keyword sequence")
    qi = toks.index(QES)
    if DOC not in toks[qi + 1:]:
        raise MalformedKeywords("malformed keyword sequence")
    di = toks.index(DOC, qi + 1)
    markers = (QES, DOC)
    q = [t for t in toks[qi + 1:di] if t not in markers]
    d = [t for t in toks[di + 1:] if t not in markers]
    return KeywordSet(_dedup(q), _dedup(d))


def _dedup(items: list[str]) -> list[str]:
    seen: set[str] = set()
    return [x for x in items if not (x in seen or seen.add(x))]


@dataclass
class GenerationConfig:
    mode: str = "hard"
    strategy: str = "greedy"
    beam_width: int = 8
    max_len: int = 40
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.strategy not in ("greedy", "beam"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.beam_width < 1 or self.max_len < 1:
            raise ValueError("beam_width and max_len must be >= 1")


@dataclass
class Decoded:
    ids: list[int]
    finished: bool
    score: float = 0.0


def beam_search(step_fn: Callable[[list[list[int]]], np.ndarray], start: Sequence[int], eos_id: int,
                beam_width: int = 8, max_len: int = 40, length_penalty: float = 1.0) -> Decoded:
    """Length-normalized beam search.

    ``step_fn`` maps a list of prefixes (each ``start`` + generated ids) to
    an ``(n, V)`` array of next-token log-probabilities.  Hypotheses that
    emit EOS leave the beam and compete in the final pool by
    ``sum_logp / len**length_penalty``.  Returned ids exclude ``start`` and
    include EOS when finished.
    """
    start = list(start)
    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[float, list[int], float]] = []
    for step in range(max_len):
        logp = np.asarray(step_fn([start + g for g, _ in live]), dtype=np.float64)
        totals = np.array([s for _, s in live])[:, None] + logp
        flat = totals.reshape(-1)
        order = np.argsort(-flat, kind="stable")[:beam_width]
        V = logp.shape[1]
        nxt = []
        for idx in order:
            i, v = divmod(int(idx), V)
            seq = live[i][0] + [v]
            if v == eos_id:
                finished.append((flat[idx] / len(seq) ** length_penalty, seq, float(flat[idx])))
            else:
                nxt.append((seq, float(flat[idx])))
        live = nxt
        if not live:
            break
    if finished:
        best = max(finished, key=lambda f: f[0])  # max keeps the earliest on ties
        return Decoded(best[1], True, float(best[0]))
    seq, total = max(live, key=lambda h: h[1] / len(h[0]) ** length_penalty)
    return Decoded(seq, False, total / len(seq) ** length_penalty)


def greedy_search(step_fn: Callable[[list[list[int]]], np.ndarray], start: Sequence[int], eos_id: int,
                  max_len: int = 40) -> Decoded:
    seq: list[int] = []
    total = 0.0
    for _ in range(max_len):
        logp = np.asarray(step_fn([list(start) + seq]))[0]
        v = int(np.argmax(logp))
        total += float(logp[v])
        seq.append(v)
        if v == eos_id:
            return Decoded(seq, True, total / len(seq))
    return Decoded(seq, False, total / max(1, len(seq)))


@dataclass
class Example:
    """One sample converted to id lists (keywords without BOS/EOS)."""
    doc: list[int]
    ans: list[int]
    kw: list[int]
    q: list[int]


class DPKGNetwork(Module):
    """Shared expanded encoder, keyword decoder, keyword encoder, question decoder."""

    def __init__(self, vocab_size: int, d_model: int = 64, n_heads: int = 4, d_ff: int = 256,
                 n_enc_layers: int = 2, n_dec_layers: int = 2, n_kw_enc_layers: int = 1,
                 max_len: int = 128, seed: int = 0, init_std: float = 0.02, dtype="float32",
                 use_aa: bool = True, kweight_softmax: bool = False, pad_id: int = 0):
        self.config = dict(vocab_size=vocab_size, d_model=d_model, n_heads=n_heads, d_ff=d_ff,
                           n_enc_layers=n_enc_layers, n_dec_layers=n_dec_layers,
                           n_kw_enc_layers=n_kw_enc_layers, max_len=max_len, seed=seed,
                           init_std=init_std, dtype=str(np.dtype(dtype)), use_aa=use_aa,
                           kweight_softmax=kweight_softmax, pad_id=pad_id)
        init = Init(seed, init_std, np.dtype(dtype))
        self.d_model = d_model
        self.max_len = max_len
        self.pad_id = pad_id
        self.dtype = np.dtype(dtype)
        self.embedding = init.normal(vocab_size, d_model)
        self.encoder = ExpandedEncoder(init, d_model, n_heads, d_ff, n_enc_layers)
        self.kw_decoder = AnswerAwareDecoder(init, d_model, n_heads, d_ff, n_dec_layers, use_aa, kweight_softmax)
        self.kw_encoder = Encoder(init, d_model, n_heads, d_ff, n_kw_enc_layers)
        self.q_decoder = AnswerAwareDecoder(init, d_model, n_heads, d_ff, n_dec_layers, use_aa, kweight_softmax)
        self._pos = sinusoidal_positions(max_len, d_model, self.dtype)
        self._emb_scale = math.sqrt(d_model)

    def embed(self, ids: np.ndarray) -> Tensor:
        L = ids.shape[-1]
        if L > self.max_len:
            raise ValueError("length overflow")
        x = T.scale(T.embedding(self.embedding, ids), self._emb_scale)
        return T.add(x, self._pos[:L])

    def encode(self, doc: list[list[int]], ans: list[list[int]]) -> EncoderOutput:
        for x, y in zip(doc, ans):
            if len(x) + len(y) > self.max_len:
                raise ValueError("length overflow")
        return self.encoder(self.embed, doc, ans, self.pad_id)

    def k_weight(self, enc: EncoderOutput) -> Tensor:
        return answer_weights(enc.h_doc, enc.h_ans, enc.ans_mask)

    def encode_keywords(self, kw: list[list[int]]) -> tuple[Tensor, np.ndarray]:
        ids, mask = pack(kw, self.pad_id)
        return self.kw_encoder(self.embed(ids), mask), mask

    def question_memory(self, enc: EncoderOutput, kw: list[list[int]]) -> tuple[Tensor, np.ndarray, Tensor, np.ndarray]:
        """Cross-attention memory [H_da ; E(kw)] plus the keyword states themselves."""
        if all(len(k) == 0 for k in kw):
            return enc.h_da, enc.da_mask, None, None
        h_kw, kw_mask = self.encode_keywords(kw)
        memory = T.concat([enc.h_da, h_kw], axis=1)
        return memory, np.concatenate([enc.da_mask, kw_mask], axis=1), h_kw, kw_mask

    def decode(self, decoder, tgt_in: list[list[int]], enc: EncoderOutput, k_weight: Tensor,
               memory: Tensor, memory_mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
        ids, mask = pack(tgt_in, self.pad_id)
        states = decoder(self.embed(ids), mask, enc, k_weight, memory, memory_mask)
        return states, mask

    def logits(self, states: Tensor) -> Tensor:
        return T.matmul(states, T.transpose(self.embedding, (1, 0)))


def _tile(enc: EncoderOutput, n: int) -> EncoderOutput:
    rep = lambda t: Tensor(np.repeat(t.data, n, axis=0))  # noqa: E731
    return EncoderOutput(rep(enc.h_doc), rep(enc.h_ans), rep(enc.h_da),
                         np.repeat(enc.doc_mask, n, 0), np.repeat(enc.ans_mask, n, 0),
                         np.repeat(enc.da_mask, n, 0))


class DPKGModel:
    """Vocab + network + keyword mode: the unit that gets trained, saved and served."""

    def __init__(self, vocab: Vocab, net: DPKGNetwork, mode: str = "hard", keyword_variant: str = "both"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.vocab = vocab
        self.net = net
        self.mode = mode
        self.keyword_variant = keyword_variant

    # ---------------------------------------------------------- inputs

    def keyword_text(self, ks: KeywordSet) -> str:
        if self.keyword_variant == "question_only":
            ks = KeywordSet(ks.question, [])
        elif self.keyword_variant == "document_only":
            ks = KeywordSet([], ks.document)
        return format_keywords(ks, self.mode)

    def example(self, sample) -> Example:
        v = self.vocab
        kw = v.encode(self.keyword_text(sample.keywords), "keywords").ids if sample.keywords else ()
        return Example(
            doc=list(v.encode(sample.document_text(), "document").ids),
            ans=list(v.encode(sample.answer, "answer").ids),
            kw=list(kw),
            q=list(v.encode(sample.question, "question").ids),
        )

    def _as_ids(self, x, kind: str) -> list[int]:
        if isinstance(x, TokenSeq):
            return list(x.ids)
        if isinstance(x, str):
            return list(self.vocab.encode(x, kind).ids)
        return list(x)

    # ---------------------------------------------------------- decoding

    def _step_fn(self, decoder, enc: EncoderOutput, k_weight: Tensor, memory: Tensor, memory_mask: np.ndarray):
        cache: dict[int, tuple] = {}

        def step(prefixes: list[list[int]]) -> np.ndarray:
            n = len(prefixes)
            if n not in cache:
                tiled = _tile(enc, n)
                cache[n] = (tiled, Tensor(np.repeat(k_weight.data, n, 0)),
                            Tensor(np.repeat(memory.data, n, 0)), np.repeat(memory_mask, n, 0))
            e, kw, mem, mm = cache[n]
            with T.no_grad():
                states, _ = self.net.decode(decoder, prefixes, e, kw, mem, mm)
                logits = self.net.logits(states).data[:, -1, :]
            return T.log_softmax_np(logits.astype(np.float64))

        return step

    def _run(self, decoder, enc, k_weight, memory, memory_mask, start, cfg: GenerationConfig) -> Decoded:
        step = self._step_fn(decoder, enc, k_weight, memory, memory_mask)
        eos = self.vocab.eos_id
        if cfg.strategy == "greedy":
            return greedy_search(step, start, eos, cfg.max_len)
        return beam_search(step, start, eos, cfg.beam_width, cfg.max_len, cfg.length_penalty)

    def _encode_one(self, doc, ans):
        doc_ids, ans_ids = self._as_ids(doc, "document"), self._as_ids(ans, "answer")
        with T.no_grad():
            enc = self.net.encode([doc_ids], [ans_ids])
            return enc, self.net.k_weight(enc)

    def decode_keywords(self, doc, ans, cfg: GenerationConfig) -> Decoded:
        enc, kw = self._encode_one(doc, ans)
        return self._run(self.net.kw_decoder, enc, kw, enc.h_da, enc.da_mask, [self.vocab.bos_id], cfg)

    def decode_question(self, doc, ans, keywords, cfg: GenerationConfig) -> Decoded:
        enc, kw = self._encode_one(doc, ans)
        kw_ids = [i for i in self._as_ids(keywords, "keywords")
                  if i not in (self.vocab.bos_id, self.vocab.eos_id, self.vocab.pad_id)]
        with T.no_grad():
            memory, mask, _, _ = self.net.question_memory(enc, [kw_ids])
        start = [self.vocab.bos_id] + self.vocab.prefix_ids("question")
        return self._run(self.net.q_decoder, enc, kw, memory, mask, start, cfg)

    def generate_keywords(self, doc, ans, cfg: GenerationConfig | None = None) -> TokenSeq:
        return TokenSeq(tuple(self.decode_keywords(doc, ans, cfg or GenerationConfig(mode=self.mode)).ids), "keywords")

    def generate_question(self, doc, ans, keywords, cfg: GenerationConfig | None = None) -> TokenSeq:
        return TokenSeq(tuple(self.decode_question(doc, ans, keywords, cfg or GenerationConfig(mode=self.mode)).ids),
                        "question")

    def greedy_batch(self, examples: list[Example], which: str, keywords: list[list[int]] | None = None,
                     max_len: int = 40) -> list[Decoded]:
        """Greedy decoding of many samples at once (evaluation fast path)."""
        v = self.vocab
        with T.no_grad():
            enc = self.net.encode([e.doc for e in examples], [e.ans for e in examples])
            kwt = self.net.k_weight(enc)
            if which == "keywords":
                decoder, memory, mask = self.net.kw_decoder, enc.h_da, enc.da_mask
                start = [v.bos_id]
            else:
                kws = keywords if keywords is not None else [e.kw for e in examples]
                decoder = self.net.q_decoder
                memory, mask, _, _ = self.net.question_memory(enc, kws)
                start = [v.bos_id] + v.prefix_ids("question")
            B = len(examples)
            seqs = [[] for _ in range(B)]
            done = [False] * B
            for _ in range(max_len):
                prefixes = [start + s for s in seqs]
                states, _ = self.net.decode(decoder, prefixes, enc, kwt, memory, mask)
                nxt = np.argmax(self.net.logits(states).data[:, -1, :], axis=-1)
                for i in range(B):
                    if not done[i]:
                        seqs[i].append(int(nxt[i]))
                        done[i] = int(nxt[i]) == v.eos_id
                if all(done):
                    break
        return [Decoded(s, d) for s, d in zip(seqs, done)]

    def keywords_to_text(self, ids: Sequence[int]) -> str:
        return self.vocab.decode(ids)

    def question_to_text(self, ids: Sequence[int]) -> str:
        return self.vocab.decode(ids)
