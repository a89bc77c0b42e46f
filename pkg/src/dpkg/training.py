"""Joint keyword/question training with the bridge loss."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import metrics
from . import tensor as T
from .model import DPKGModel, Example, MalformedKeywords, parse_keywords
from .net import pack
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    beta1: float = 1.0
    beta2: float = 1.0
    beta3: float = 1.0
    batch_size: int = 8
    learning_rate: float = 3e-4
    epochs: int = 50
    warmup_steps: int = 100
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    early_stop_patience: int | None = 5
    keep_best: bool = True
    eval_every: int = 1
    eval_generation: bool = True
    seed: int = 0

    def __post_init__(self):
        if min(self.beta1, self.beta2, self.beta3) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    best_dev: float = float("inf")
    epochs_since_improvement: int = 0


# ------------------------------------------------------------------ losses

def xent_loss(logits: Tensor, targets, pad_id: int = 0) -> Tensor:
    """Mean token NLL over non-PAD target positions."""
    ids = np.asarray(getattr(targets, "ids", targets), dtype=np.int64)
    return T.cross_entropy(logits, ids, ignore_index=pad_id)


def _masked_mean(x: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean over axis 1 of (B, L, d) ignoring masked rows; empty rows give 0."""
    m = mask.astype(x.dtype)
    counts = m.sum(axis=1, keepdims=True)
    w = (m / np.maximum(counts, 1))[..., None]
    return T.sum_axis(T.mul(x, w), 1), counts[:, 0] > 0


def bridge_loss(h_k: Tensor, gt_encoded: Tensor, h_k_mask: np.ndarray | None = None,
                gt_mask: np.ndarray | None = None) -> Tensor:
    """|| mean_t h_k - mean_t E(g) ||_2, averaged over the batch.

    Accepts (T, d) pairs or padded (B, T, d) batches with validity masks;
    batch rows whose ground-truth keyword sequence is empty are skipped.
    """
    h_k, gt_encoded = T.as_tensor(h_k), T.as_tensor(gt_encoded)
    if h_k.shape[-1] != gt_encoded.shape[-1]:
        raise ValueError(f"hidden size mismatch: {h_k.shape[-1]} vs {gt_encoded.shape[-1]}")
    if h_k.ndim == 2:
        return T.l2_norm(T.add(T.mean_pool(h_k, 0), T.neg(T.mean_pool(gt_encoded, 0))))
    if h_k_mask is None:
        h_k_mask = np.ones(h_k.shape[:2], dtype=bool)
    if gt_mask is None:
        gt_mask = np.ones(gt_encoded.shape[:2], dtype=bool)
    f_k, _ = _masked_mean(h_k, h_k_mask)
    f_g, valid = _masked_mean(gt_encoded, gt_mask)
    norms = T.l2_norm(T.add(f_k, T.neg(f_g)))
    n = max(1, int(valid.sum()))
    return T.sum_all(T.mul(norms, valid.astype(h_k.dtype) / n))


def total_loss(l1, l2, l3, cfg: TrainConfig):
    """beta1*l1 + beta2*l2 + beta3*l3 (works on floats or tensors)."""
    if isinstance(l1, Tensor):
        return T.add(T.add(T.scale(l1, cfg.beta1), T.scale(l2, cfg.beta2)), T.scale(l3, cfg.beta3))
    return cfg.beta1 * l1 + cfg.beta2 * l2 + cfg.beta3 * l3


def compute_losses(model: DPKGModel, examples: Sequence[Example], cfg: TrainConfig) -> dict[str, Tensor]:
    """Teacher-forced forward of both decoders from one shared encoding."""
    net, v = model.net, model.vocab
    bos, eos, pad = v.bos_id, v.eos_id, v.pad_id
    enc = net.encode([e.doc for e in examples], [e.ans for e in examples])
    kwt = net.k_weight(enc)

    kw_states, kw_mask = net.decode(net.kw_decoder, [[bos] + e.kw for e in examples], enc, kwt,
                                    enc.h_da, enc.da_mask)
    kw_tgt, _ = pack([e.kw + [eos] for e in examples], pad)
    l1 = xent_loss(net.logits(kw_states), kw_tgt, pad)

    kws = [e.kw for e in examples]
    memory, mem_mask, h_g, g_mask = net.question_memory(enc, kws)
    q_states, _ = net.decode(net.q_decoder, [[bos] + e.q for e in examples], enc, kwt, memory, mem_mask)
    q_tgt, _ = pack([e.q + [eos] for e in examples], pad)
    l2 = xent_loss(net.logits(q_states), q_tgt, pad)

    if h_g is None:
        l3 = Tensor(np.zeros((), dtype=net.dtype))
    else:
        l3 = bridge_loss(kw_states, h_g, kw_mask, g_mask)
    return {"l1": l1, "l2": l2, "l3": l3, "total": total_loss(l1, l2, l3, cfg)}


# ------------------------------------------------------------------ optimizer

def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup_steps <= 0:
        return cfg.learning_rate
    return cfg.learning_rate * min(1.0, step / cfg.warmup_steps)


def adamw_update(params: dict[str, Tensor], state: TrainState, cfg: TrainConfig) -> float:
    """Clip by global norm, then one decoupled-weight-decay Adam step. Returns the pre-clip norm."""
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    clip = 1.0
    if cfg.grad_clip_norm and norm > cfg.grad_clip_norm:
        clip = cfg.grad_clip_norm / (norm + 1e-6)
    state.step += 1
    lr = lr_at(state.step, cfg)
    b1, b2 = cfg.adam_betas
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for k, p in params.items():
        g = grads[k] * clip
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if p.data.ndim >= 2 and cfg.weight_decay:
            p.data -= lr * cfg.weight_decay * p.data
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)).astype(p.dtype)
    return norm


def train_step(model: DPKGModel, examples: Sequence[Example], state: TrainState, cfg: TrainConfig) -> dict:
    params = model.net.named_parameters()
    for p in params.values():
        p.grad = None
    losses = compute_losses(model, examples, cfg)
    out = {k: float(t.data) for k, t in losses.items()}
    if not all(np.isfinite(list(out.values()))):
        log.error("non-finite loss at step %d: %s", state.step, out)
        out.update(grad_norm=float("nan"), skipped=True)
        return out
    T.backward(losses["total"])
    out["grad_norm"] = adamw_update(params, state, cfg)
    out["skipped"] = False
    return out


# ------------------------------------------------------------------ evaluation

def batch_losses(model: DPKGModel, examples: Sequence[Example], cfg: TrainConfig) -> dict[str, float]:
    sums = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "total": 0.0}
    with T.no_grad():
        for i in range(0, len(examples), cfg.batch_size):
            chunk = examples[i:i + cfg.batch_size]
            for k, t in compute_losses(model, chunk, cfg).items():
                sums[k] += float(t.data) * len(chunk)
    return {k: s / len(examples) for k, s in sums.items()}


def teacher_forced_keyword_f1(model: DPKGModel, examples: Sequence[Example], batch_size: int = 16) -> float:
    """Token F1 of per-position argmax keyword predictions under teacher forcing."""
    v, net = model.vocab, model.net
    scores = []
    with T.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            enc = net.encode([e.doc for e in chunk], [e.ans for e in chunk])
            kwt = net.k_weight(enc)
            states, _ = net.decode(net.kw_decoder, [[v.bos_id] + e.kw for e in chunk], enc, kwt,
                                   enc.h_da, enc.da_mask)
            pred = np.argmax(net.logits(states).data, axis=-1)
            for row, e in zip(pred, chunk):
                p = [v.itos[t] for t in row[:len(e.kw)]]
                g = [v.itos[t] for t in e.kw]
                scores.append(_token_list_f1(p, g))
    return float(np.mean(scores))


def _token_list_f1(pred: list[str], gold: list[str]) -> float:
    if not pred and not gold:
        return 1.0
    overlap = sum((Counter(pred) & Counter(gold)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(gold)
    return 2 * p * r / (p + r)


def generation_eval(model: DPKGModel, samples, max_len: int = 40) -> dict:
    """Greedy keywords then questions; scores with generated and gold keywords."""
    v = model.vocab
    examples = [model.example(s) for s in samples]
    kw_dec = model.greedy_batch(examples, "keywords", max_len=max_len)
    gen_kw = [[t for t in d.ids if t != v.eos_id] for d in kw_dec]
    q_gk = model.greedy_batch(examples, "question", keywords=gen_kw, max_len=max_len)
    q_gt = model.greedy_batch(examples, "question", max_len=max_len)
    gold_q = [" ".join(v.itos[t] for t in e.q[len(v.prefix_ids("question")):]) for e in examples]
    hyp_gk = [v.decode(d.ids) for d in q_gk]
    hyp_gt = [v.decode(d.ids) for d in q_gt]
    malformed = 0
    kf1 = []
    for ids, e in zip(gen_kw, examples):
        gold = parse_keywords(v.decode(e.kw), model.mode)
        try:
            pred = parse_keywords(v.decode(ids), model.mode)
        except MalformedKeywords:
            malformed += 1
            pred = parse_keywords([t for t in v.decode(ids).split()], "soft")
        kf1.append(metrics.token_f1(pred, gold))
    return {
        "keyword_f1": float(np.mean(kf1)),
        "bleu4_gk": metrics.bleu4(hyp_gk, gold_q),
        "bleu4_gt": metrics.bleu4(hyp_gt, gold_q),
        "em_gk": float(np.mean([h == g for h, g in zip(hyp_gk, gold_q)])),
        "em_gt": float(np.mean([h == g for h, g in zip(hyp_gt, gold_q)])),
        "malformed_keywords": malformed,
        "hyp_gk": hyp_gk,
        "hyp_gt": hyp_gt,
        "generated_keywords": [v.decode(ids) for ids in gen_kw],
    }


# ------------------------------------------------------------------ loop

def snapshot(model: DPKGModel) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.net.named_parameters().items()}


def restore(model: DPKGModel, snap: dict[str, np.ndarray]) -> None:
    for k, p in model.net.named_parameters().items():
        p.data[...] = snap[k]


def train_loop(model: DPKGModel, train, dev, cfg: TrainConfig,
               log_path=None, on_epoch: Callable[[dict], None] | None = None) -> list[dict]:
    """Epochs of shuffled mini-batches with dev tracking and early stopping.

    ``train``/``dev`` are samples with gold keywords.  Returns the log
    records; with ``keep_best`` the parameters of the best dev epoch are
    restored at the end.
    """
    if not train:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(cfg.seed)
    tr = [model.example(s) for s in train]
    dv = [model.example(s) for s in dev] if dev else []
    state = TrainState()
    history: list[dict] = []
    best = None
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(tr))
            agg = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "total": 0.0}
            n_steps = 0
            for i in range(0, len(order), cfg.batch_size):
                batch = [tr[j] for j in order[i:i + cfg.batch_size]]
                m = train_step(model, batch, state, cfg)
                if not m["skipped"]:
                    n_steps += 1
                    for k in agg:
                        agg[k] += m[k]
            rec = {"epoch": epoch, "step": state.step, **{k: a / max(1, n_steps) for k, a in agg.items()}}
            if dv:
                rec["dev"] = batch_losses(model, dv, cfg)
                if cfg.eval_generation and epoch % cfg.eval_every == 0:
                    g = generation_eval(model, dev)
                    rec["dev"].update(keyword_f1=g["keyword_f1"], bleu4_gk=g["bleu4_gk"])
                score = rec["dev"]["total"]
            else:
                score = rec["total"]
            if score < state.best_dev:
                state.best_dev = score
                state.epochs_since_improvement = 0
                if cfg.keep_best:
                    best = snapshot(model)
            else:
                state.epochs_since_improvement += 1
            history.append(rec)
            log.info("epoch %d %s", epoch, {k: rec[k] for k in ("l1", "l2", "l3", "total")})
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if on_epoch:
                on_epoch(rec)
            if cfg.early_stop_patience is not None and state.epochs_since_improvement >= cfg.early_stop_patience:
                break
    finally:
        if fh:
            fh.close()
    if cfg.keep_best and best is not None:
        restore(model, best)
    model.train_state = state
    return history


# ------------------------------------------------------------------ gradient oracle

def gradcheck_problem(dim: int = 8, n_layers: int = 1, vocab_size: int = 32, seed: int = 0,
                      init_std: float = 0.5, n_examples: int = 2, cfg: TrainConfig | None = None):
    """A tiny float64 model plus random batch for finite-difference checks.

    Returns ``(model, examples, loss_fn)`` where ``loss_fn()`` rebuilds the
    total loss.  A larger ``init_std`` than training uses keeps gradients
    well above finite-difference roundoff.
    """
    from .model import DPKGNetwork
    from .text import PREFIXES, RESERVED, Vocab, tokenize

    base = list(RESERVED)
    for p in PREFIXES.values():
        base += [t for t in tokenize(p) if t not in base]
    if vocab_size < len(base) + 4:
        raise ValueError(f"vocab_size must be >= {len(base) + 4}")
    vocab = Vocab(base + [f"w{i}" for i in range(vocab_size - len(base))])
    heads = 2 if dim % 2 == 0 else 1
    net = DPKGNetwork(len(vocab), d_model=dim, n_heads=heads, d_ff=2 * dim, n_enc_layers=n_layers,
                      n_dec_layers=n_layers, n_kw_enc_layers=n_layers, max_len=32, seed=seed,
                      init_std=init_std, dtype="float64", pad_id=vocab.pad_id)
    model = DPKGModel(vocab, net, "hard")
    rng = np.random.default_rng(seed)
    words = np.arange(len(base), len(vocab))
    rand = lambda n: [int(x) for x in rng.choice(words, n)]  # noqa: E731
    examples = [
        Example(doc=vocab.prefix_ids("document") + rand(5 + i), ans=vocab.prefix_ids("answer") + rand(2),
                kw=[vocab.qes_id] + rand(2) + [vocab.doc_id] + rand(1 + i),
                q=vocab.prefix_ids("question") + rand(4))
        for i in range(n_examples)
    ]
    cfg = cfg or TrainConfig()
    return model, examples, lambda: compute_losses(model, examples, cfg)["total"]


def run_gradcheck(dim: int = 8, n_layers: int = 1, vocab_size: int = 32, seed: int = 0,
                  init_std: float = 0.5, eps: float = 1e-5) -> float:
    model, _, f = gradcheck_problem(dim, n_layers, vocab_size, seed, init_std)
    return T.grad_check(f, model.net.named_parameters().values(), eps)
