"""scikit-learn style wrappers: a keyword annotator transformer and the question generator."""

from __future__ import annotations

import dataclasses
from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .annotate import INTERROGATIVES, AnnotationConfig, annotate
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Sample
from .model import (DPKGModel, DPKGNetwork, GenerationConfig, KeywordSet, MalformedKeywords,
                    format_keywords, parse_keywords)
from .text import build_vocab
from .training import TrainConfig, train_loop


def check_samples(X: Iterable, require_keywords: bool = False) -> list[Sample]:
    """Coerce dicts to :class:`Sample` and validate the batch."""
    out = []
    for i, x in enumerate(X):
        s = Sample.from_dict(x) if isinstance(x, dict) else x
        if not isinstance(s, Sample):
            raise TypeError(f"item {i}: expected Sample or dict, got {type(x).__name__}")
        if require_keywords and s.keywords is None:
            raise ValueError(f"sample {s.id}: missing keywords (run the annotator first)")
        out.append(s)
    if not out:
        raise ValueError("no samples")
    return out


class KeywordAnnotator(TransformerMixin, BaseEstimator):
    """Adds question and document keywords to samples. Stateless; ``fit`` only validates."""

    def __init__(self, version: str = "v1", interrogatives=INTERROGATIVES, max_keyword_tokens: int = 8):
        self.version = version
        self.interrogatives = interrogatives
        self.max_keyword_tokens = max_keyword_tokens

    def _config(self) -> AnnotationConfig:
        return AnnotationConfig(self.version, frozenset(self.interrogatives), self.max_keyword_tokens)

    def fit(self, X, y=None):
        self._config()
        self.n_samples_seen_ = len(check_samples(X))
        return self

    def transform(self, X) -> list[Sample]:
        cfg = self._config()
        return [dataclasses.replace(s, keywords=annotate(s, cfg)) for s in check_samples(X)]


class DPKGQuestionGenerator(BaseEstimator):
    """Keyword-guided multi-hop question generator.

    ``fit`` takes samples carrying gold keywords and questions; ``predict``
    returns generated questions, guided by self-generated keywords by
    default or by the samples' gold keywords with ``keywords="gold"``.
    """

    def __init__(self, mode: str = "hard", keyword_variant: str = "both", d_model: int = 64,
                 n_heads: int = 4, d_ff: int = 256, n_enc_layers: int = 2, n_dec_layers: int = 2,
                 n_kw_enc_layers: int = 1, max_len: int = 128, use_aa: bool = True,
                 kweight_softmax: bool = False, init_std: float = 0.02, dtype: str = "float32",
                 beta1: float = 1.0, beta2: float = 1.0, beta3: float = 1.0, batch_size: int = 8,
                 learning_rate: float = 3e-4, epochs: int = 50, warmup_steps: int = 100,
                 grad_clip_norm: float = 1.0, weight_decay: float = 0.01, early_stop_patience: int | None = 5,
                 keep_best: bool = True, eval_generation: bool = False, min_count: int = 1,
                 strategy: str = "beam", beam_width: int = 8, max_gen_len: int = 40,
                 length_penalty: float = 1.0, random_state: int = 0):
        self.mode = mode
        self.keyword_variant = keyword_variant
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.n_enc_layers = n_enc_layers
        self.n_dec_layers = n_dec_layers
        self.n_kw_enc_layers = n_kw_enc_layers
        self.max_len = max_len
        self.use_aa = use_aa
        self.kweight_softmax = kweight_softmax
        self.init_std = init_std
        self.dtype = dtype
        self.beta1 = beta1
        self.beta2 = beta2
        self.beta3 = beta3
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.warmup_steps = warmup_steps
        self.grad_clip_norm = grad_clip_norm
        self.weight_decay = weight_decay
        self.early_stop_patience = early_stop_patience
        self.keep_best = keep_best
        self.eval_generation = eval_generation
        self.min_count = min_count
        self.strategy = strategy
        self.beam_width = beam_width
        self.max_gen_len = max_gen_len
        self.length_penalty = length_penalty
        self.random_state = random_state

    # -------------------------------------------------------------- config views

    def train_config(self) -> TrainConfig:
        return TrainConfig(beta1=self.beta1, beta2=self.beta2, beta3=self.beta3, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, epochs=self.epochs, warmup_steps=self.warmup_steps,
                           grad_clip_norm=self.grad_clip_norm, weight_decay=self.weight_decay,
                           early_stop_patience=self.early_stop_patience, keep_best=self.keep_best,
                           eval_generation=self.eval_generation, seed=self.random_state)

    def generation_config(self, **overrides) -> GenerationConfig:
        kw = dict(mode=self.mode, strategy=self.strategy, beam_width=self.beam_width,
                  max_len=self.max_gen_len, length_penalty=self.length_penalty)
        kw.update(overrides)
        return GenerationConfig(**kw)

    def _build(self, vocab) -> DPKGModel:
        net = DPKGNetwork(len(vocab), d_model=self.d_model, n_heads=self.n_heads, d_ff=self.d_ff,
                          n_enc_layers=self.n_enc_layers, n_dec_layers=self.n_dec_layers,
                          n_kw_enc_layers=self.n_kw_enc_layers, max_len=self.max_len,
                          seed=self.random_state, init_std=self.init_std, dtype=self.dtype,
                          use_aa=self.use_aa, kweight_softmax=self.kweight_softmax, pad_id=vocab.pad_id)
        return DPKGModel(vocab, net, self.mode, self.keyword_variant)

    # -------------------------------------------------------------- sklearn API

    def fit(self, X, y=None, X_dev=None, log_path=None, on_epoch=None):
        samples = check_samples(X, require_keywords=True)
        if y is not None:
            y = list(y)
            if len(y) != len(samples):
                raise ValueError("X and y differ in length")
            samples = [dataclasses.replace(s, question=q) for s, q in zip(samples, y)]
        dev = check_samples(X_dev, require_keywords=True) if X_dev else []
        self.vocab_ = build_vocab(samples + dev, min_count=self.min_count)
        self.model_ = self._build(self.vocab_)
        self.history_ = train_loop(self.model_, samples, dev, self.train_config(), log_path, on_epoch)
        self.n_samples_seen_ = len(samples)
        return self

    def predict_keywords(self, X, **gen) -> list[str]:
        """Generated keyword sequences (decoded text, with role markers in hard mode)."""
        check_is_fitted(self, "model_")
        cfg = self.generation_config(**gen)
        out = []
        for s in check_samples(X):
            d = self.model_.decode_keywords(s.document_text(), s.answer, cfg)
            out.append(self.vocab_.decode(d.ids))
        return out

    def predict(self, X, keywords: str = "generated", **gen) -> list[str]:
        return [r["question"] for r in self.generate(X, keywords=keywords, **gen)]

    def generate(self, X, keywords: str = "generated", **gen) -> list[dict]:
        """Generation records: ``{id, mode, keywords_generated, keywords_parsed, question, flags}``."""
        check_is_fitted(self, "model_")
        if keywords not in ("generated", "gold"):
            raise ValueError("keywords must be 'generated' or 'gold'")
        cfg = self.generation_config(**gen)
        m = self.model_
        records = []
        for s in check_samples(X, require_keywords=keywords == "gold"):
            flags = []
            doc, ans = s.document_text(), s.answer
            if keywords == "gold":
                kw_text = m.vocab.decode(m.vocab.encode(m.keyword_text(s.keywords), "keywords").ids)
            else:
                d = m.decode_keywords(doc, ans, cfg)
                if not d.finished:
                    flags.append("keywords_truncated")
                kw_text = m.vocab.decode(d.ids)
            try:
                parsed = parse_keywords(kw_text, self.mode)
            except MalformedKeywords:
                flags.append("malformed_keywords")
                parsed = KeywordSet()
            q = m.decode_question(doc, ans, kw_text, cfg)
            if not q.finished:
                flags.append("question_truncated")
            records.append({
                "id": s.id,
                "mode": self.mode,
                "keywords_source": keywords,
                "keywords_generated": kw_text,
                "keywords_parsed": parsed.to_dict(),
                "question": m.vocab.decode(q.ids),
                "flags": flags,
            })
        return records

    def score(self, X, y=None) -> float:
        """Corpus BLEU-4 of questions generated with self-generated keywords."""
        samples = check_samples(X)
        refs = list(y) if y is not None else [s.question for s in samples]
        return metrics.bleu4(self.predict(samples), refs)

    # -------------------------------------------------------------- persistence

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        state = getattr(self.model_, "train_state", None)
        save_checkpoint(self.model_, path, step=state.step if state else 0,
                        best_dev=state.best_dev if state else None,
                        extra={"estimator_params": self.get_params()})

    @classmethod
    def load(cls, path) -> "DPKGQuestionGenerator":
        model = load_checkpoint(path)
        params = dict(model.checkpoint_meta.get("extra", {}).get("estimator_params", {}))
        est = cls(**{k: v for k, v in params.items() if k in cls._get_param_names()})
        est.model_ = model
        est.vocab_ = model.vocab
        est.mode = model.mode
        est.keyword_variant = model.keyword_variant
        return est


__all__ = ["DPKGQuestionGenerator", "KeywordAnnotator", "check_samples", "format_keywords"]
