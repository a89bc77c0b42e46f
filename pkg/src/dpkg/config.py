"""Application configuration: one declarative file (JSON or YAML) plus flag overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .annotate import AnnotationConfig
from .model import GenerationConfig
from .training import TrainConfig


@dataclass
class ModelDims:
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_kw_enc_layers: int = 1
    max_len: int = 128
    init_std: float = 0.02
    dtype: str = "float32"
    use_aa: bool = True
    kweight_softmax: bool = False


@dataclass
class Paths:
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    vocab: str | None = None
    checkpoint_dir: str = "runs"


@dataclass
class AppConfig:
    mode: str = "hard"
    setting: str = "SF"
    keyword_variant: str = "both"
    min_count: int = 1
    model: ModelDims = field(default_factory=ModelDims)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.setting not in ("SF", "Full"):
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.keyword_variant not in ("both", "question_only", "document_only"):
            raise ValueError(f"unknown keyword variant {self.keyword_variant!r}")
        self.generation.mode = self.mode

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["annotation"]["interrogatives"] = sorted(self.annotation.interrogatives)
        d["train"]["adam_betas"] = list(self.train.adam_betas)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def estimator_params(self) -> dict:
        """Keyword arguments for :class:`~dpkg.estimator.DPKGQuestionGenerator`."""
        t, g = self.train, self.generation
        return dict(
            mode=self.mode, keyword_variant=self.keyword_variant, min_count=self.min_count,
            **dataclasses.asdict(self.model),
            beta1=t.beta1, beta2=t.beta2, beta3=t.beta3, batch_size=t.batch_size,
            learning_rate=t.learning_rate, epochs=t.epochs, warmup_steps=t.warmup_steps,
            grad_clip_norm=t.grad_clip_norm, weight_decay=t.weight_decay,
            early_stop_patience=t.early_stop_patience, keep_best=t.keep_best,
            eval_generation=t.eval_generation, random_state=t.seed,
            strategy=g.strategy, beam_width=g.beam_width, max_gen_len=g.max_len,
            length_penalty=g.length_penalty,
        )


_SECTIONS = {"model": ModelDims, "train": TrainConfig, "generation": GenerationConfig,
             "annotation": AnnotationConfig, "paths": Paths}


def _build(cls, values: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    if cls is TrainConfig and "adam_betas" in values:
        values = {**values, "adam_betas": tuple(values["adam_betas"])}
    return cls(**values)


def from_dict(d: dict, overrides: dict | None = None) -> AppConfig:
    """Build a config from nested mappings; ``overrides`` uses ``section.key`` or top-level keys."""
    d = {k: (dict(v) if isinstance(v, dict) else v) for k, v in (d or {}).items()}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if "." in key:
            sec, name = key.split(".", 1)
            d.setdefault(sec, {})[name] = val
        else:
            d[key] = val
    top = {}
    for k, v in d.items():
        if k in _SECTIONS:
            if not isinstance(v, dict):
                raise ValueError(f"section {k!r} must be a mapping")
            top[k] = _build(_SECTIONS[k], v, k)
        else:
            top[k] = v
    return _build(AppConfig, top, "config")


def load_config(path=None, overrides: dict | None = None) -> AppConfig:
    """Read a JSON/YAML file (``path`` may be None) and apply overrides. Flags win."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        text = p.read_text(encoding="utf-8")
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ValueError(f"{p}: top level must be a mapping")
    return from_dict(data, overrides)
