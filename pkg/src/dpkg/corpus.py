"""Samples, dataset loaders, JSONL persistence and the synthetic corpus."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import KeywordSet

log = logging.getLogger(__name__)

SETTINGS = ("SF", "Full")


@dataclass
class Sample:
    id: str
    paragraphs: list[tuple[str, list[str]]]
    answer: str
    question: str
    supporting_facts: list[tuple[str, int]]
    keywords: KeywordSet | None = None
    setting: str = "SF"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.answer:
            raise ValueError(f"sample {self.id}: empty answer")
        if self.setting not in SETTINGS:
            raise ValueError(f"sample {self.id}: unknown setting {self.setting!r}")
        self.paragraphs = [(str(t), list(s)) for t, s in self.paragraphs]
        self.supporting_facts = [(str(t), int(i)) for t, i in self.supporting_facts]

    def supporting_sentences(self) -> list[str]:
        """Supporting-fact sentences in fact order; raises IndexError on a bad index."""
        paras = dict(self.paragraphs)
        out = []
        for title, idx in self.supporting_facts:
            if title not in paras or not 0 <= idx < len(paras[title]):
                raise IndexError(f"sample {self.id}: supporting fact ({title!r}, {idx}) out of range")
            out.append(paras[title][idx])
        return out

    def document_paragraphs(self) -> list[tuple[str, list[str]]]:
        if self.setting == "Full":
            return self.paragraphs
        keep = set(self.supporting_facts)
        out = []
        for title, sents in self.paragraphs:
            chosen = [s for i, s in enumerate(sents) if (title, i) in keep]
            if chosen:
                out.append((title, chosen))
        return out

    def document_sentences(self) -> list[str]:
        return [s for _, sents in self.document_paragraphs() for s in sents]

    def document_text(self) -> str:
        """Flat model input: each paragraph as ``title: sentences``, space-joined."""
        return " ".join(f"{title}: {' '.join(sents)}" for title, sents in self.document_paragraphs())

    def texts(self) -> Iterable[str]:
        for title, sents in self.paragraphs:
            yield title
            yield from sents
        yield self.question
        yield self.answer
        if self.keywords:
            yield from self.keywords.question
            yield from self.keywords.document

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "paragraphs": [[t, list(s)] for t, s in self.paragraphs],
            "answer": self.answer,
            "question": self.question,
            "supporting_facts": [[t, i] for t, i in self.supporting_facts],
            "keywords": self.keywords.to_dict() if self.keywords is not None else None,
            "setting": self.setting,
        }
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        kw = d.get("keywords")
        return cls(
            id=str(d["id"]),
            paragraphs=[(t, s) for t, s in d["paragraphs"]],
            answer=d["answer"],
            question=d["question"],
            supporting_facts=[(t, i) for t, i in d.get("supporting_facts", [])],
            keywords=KeywordSet.from_dict(kw) if kw is not None else None,
            setting=d.get("setting", "SF"),
            meta=d.get("meta", {}) or {},
        )


# ------------------------------------------------------------------ JSONL

def write_jsonl(path, records: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = r.to_dict() if hasattr(r, "to_dict") else r
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl_dicts(path) -> list[dict]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ValueError(f"{path}: invalid UTF-8 at byte offset {e.start}") from e
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            log.warning("%s:%d: blank line skipped", path, lineno)
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:{lineno}: {e.msg}") from e
    return out


def read_jsonl(path) -> list[Sample]:
    out = []
    for i, d in enumerate(read_jsonl_dicts(path), 1):
        try:
            out.append(Sample.from_dict(d))
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{path}: record {i}: {e}") from e
    return out


# ------------------------------------------------------------------ loaders

def load_hotpot(path, setting: str = "SF") -> list[Sample]:
    """HotpotQA JSON array (``_id, question, answer, context, supporting_facts``)."""
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"{path}: empty file")
    try:
        records = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed JSON at line {e.lineno} col {e.colno}: {e.msg}") from e
    if isinstance(records, dict):
        records = [records]
    out, skipped = [], 0
    for i, rec in enumerate(records):
        try:
            sf = rec.get("supporting_facts")
            if not sf:
                skipped += 1
                continue
            out.append(Sample(
                id=str(rec["_id"]),
                paragraphs=[(t, s) for t, s in rec["context"]],
                answer=rec["answer"],
                question=rec["question"],
                supporting_facts=[(t, i) for t, i in sf],
                setting=setting,
            ))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ValueError(f"{path}: record {i}: {e}") from e
    if skipped:
        log.warning("%s: %d records without supporting_facts skipped", path, skipped)
    if not out and records:
        log.warning("%s: no usable records", path)
    return out


_SENT_RE = re.compile(r"(?<=[.!?])\s+(?=[\"'(\[]?[A-Z0-9])")


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENT_RE.split(text.strip()) if s.strip()]


def load_musique(path, setting: str = "SF") -> list[Sample]:
    """MusiQue JSON lines (``id, question, answer, paragraphs[is_supporting]``)."""
    records = read_jsonl_dicts(path)
    if not records:
        raise ValueError(f"{path}: empty file")
    out, skipped = [], 0
    for i, rec in enumerate(records):
        try:
            paragraphs, sf, seen = [], [], {}
            for p in rec["paragraphs"]:
                title = p.get("title", "") or f"paragraph {p.get('idx', len(paragraphs))}"
                if title in seen:
                    seen[title] += 1
                    title = f"{title} ({seen[title]})"
                else:
                    seen[title] = 1
                sents = split_sentences(p["paragraph_text"])
                paragraphs.append((title, sents))
                if p.get("is_supporting"):
                    sf.extend((title, j) for j in range(len(sents)))
            if not sf:
                skipped += 1
                continue
            out.append(Sample(id=str(rec["id"]), paragraphs=paragraphs, answer=rec["answer"],
                              question=rec["question"], supporting_facts=sf, setting=setting))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ValueError(f"{path}: record {i}: {e}") from e
    if skipped:
        log.warning("%s: %d records without supporting paragraphs skipped", path, skipped)
    return out


def split_corpus(samples: list, ratios=(0.8, 0.1, 0.1), seed: int | None = None) -> tuple[list, list, list]:
    """Train/dev/test split: by index order, or a seeded permutation when ``seed`` is given."""
    idx = np.arange(len(samples))
    if seed is not None:
        idx = np.random.default_rng(seed).permutation(len(samples))
    n = len(samples)
    a = int(round(ratios[0] * n))
    b = a + int(round(ratios[1] * n))
    pick = lambda ix: [samples[i] for i in ix]  # noqa: E731
    return pick(idx[:a]), pick(idx[a:b]), pick(idx[b:])


# ------------------------------------------------------------------ synthetic

_FIRST = ["Alice", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ines", "Jonas",
          "Kira", "Luca", "Mara", "Nils", "Olga", "Pavel"]
_LAST = ["Moreau", "Castillo", "Lindqvist", "Okafor", "Tanaka", "Novak", "Brennan", "Ferreira",
         "Haddad", "Kowalski", "Ivanova", "Mendel", "Sato", "Quinlan", "Rossi", "Varga"]
_FIRM = ["Vantor", "Kelso", "Brightwater", "Orion", "Halcyon", "Meridian", "Tessaract", "Crestline",
         "Nimbus", "Arcadia", "Solace", "Pinegate", "Quarry", "Redfern", "Sable", "Umbra"]
_FIRM_SUFFIX = ["Labs", "Group", "Works", "Systems"]
_CITY = ["Lisbon", "Oslo", "Kyoto", "Quito", "Dakar", "Perth", "Tallinn", "Bergen", "Porto",
         "Lyon", "Graz", "Osaka", "Cusco", "Accra", "Hobart", "Tartu"]
_COUNTRY = {"Lisbon": "Portugal", "Porto": "Portugal", "Oslo": "Norway", "Bergen": "Norway",
            "Kyoto": "Japan", "Osaka": "Japan", "Quito": "Ecuador", "Cusco": "Peru",
            "Dakar": "Senegal", "Accra": "Ghana", "Perth": "Australia", "Hobart": "Australia",
            "Tallinn": "Estonia", "Tartu": "Estonia", "Lyon": "France", "Graz": "Austria"}
_ROLE = ["founder", "chairman", "treasurer", "architect"]
_FILM_A = ["Silent", "Crimson", "Hollow", "Golden", "Distant", "Broken", "Northern", "Paper"]
_FILM_B = ["River", "Harbor", "Engine", "Garden", "Signal", "Lantern", "Meadow", "Compass"]


@dataclass
class SynthSpec:
    seed: int = 1
    n_samples: int = 80
    pool_size: int = 16
    n_distractors: int = 1
    templates: tuple[str, ...] = ("role_founded", "role_hq", "film_director", "birth_country")
    setting: str = "SF"


def _person(rng, k):
    return f"{_FIRST[rng.integers(k)]} {_LAST[rng.integers(k)]}"


def _firm(rng, k):
    return f"{_FIRM[rng.integers(k)]} {_FIRM_SUFFIX[rng.integers(len(_FIRM_SUFFIX))]}"


def _film(rng, k):
    k = min(k, len(_FILM_A))
    return f"{_FILM_A[rng.integers(k)]} {_FILM_B[rng.integers(k)]}"


def _year(rng):
    return str(int(rng.integers(1900, 1960)))


def _chain(template: str, rng, k: int) -> dict:
    """One two-hop instance: two (title, sentence) facts, question, answer, gold keywords."""
    if template in ("role_founded", "role_hq"):
        x, y, role = _person(rng, k), _firm(rng, k), _ROLE[rng.integers(len(_ROLE))]
        f1 = (x, f"{x} is the {role} of {y}.")
        if template == "role_founded":
            ans = _year(rng)
            f2 = (y, f"{y} was founded in {ans}.")
            q = f"When was the company that {x} is the {role} of founded?"
            return dict(facts=[f1, f2], q=q, a=ans, qk=["when", x, role, "founded"], dk=[y, ans])
        ans = _CITY[rng.integers(min(k, len(_CITY)))]
        f2 = (y, f"{y} is headquartered in {ans}.")
        q = f"Where is the company that {x} is the {role} of headquartered?"
        return dict(facts=[f1, f2], q=q, a=ans, qk=["where", x, role, "headquartered"], dk=[y, ans])
    if template == "film_director":
        film, p, ans = _film(rng, k), _person(rng, k), _year(rng)
        f1 = (film, f"{film} is a film by director {p}.")
        f2 = (p, f"{p} was born in {ans}.")
        q = f"When was the director of {film} born?"
        return dict(facts=[f1, f2], q=q, a=ans, qk=["when", film, "director", "born"], dk=[p, ans])
    if template == "birth_country":
        p, city = _person(rng, k), _CITY[rng.integers(min(k, len(_CITY)))]
        ans = _COUNTRY[city]
        f1 = (p, f"{p} was born in {city}.")
        f2 = (city, f"{city} is a city in {ans}.")
        q = f"In which country is the city where {p} was born?"
        return dict(facts=[f1, f2], q=q, a=ans, qk=["which", p, "born", "city"], dk=[city, ans])
    raise ValueError(f"unknown template {template!r}")


def gen_synthetic(spec: SynthSpec) -> list[Sample]:
    """Deterministic two-hop corpus; ``keywords`` holds the template gold."""
    if not spec.templates or spec.pool_size < 1:
        raise ValueError("empty pools")
    rng = np.random.default_rng(spec.seed)
    k = min(spec.pool_size, len(_FIRST))
    out = []
    for n in range(spec.n_samples):
        template = spec.templates[int(rng.integers(len(spec.templates)))]
        c = _chain(template, rng, k)
        (t1, s1), (t2, s2) = c["facts"]
        paras = [(t1, [s1]), (t2, [s2])]
        titles = {t1, t2}
        for _ in range(spec.n_distractors):
            d = _chain(spec.templates[int(rng.integers(len(spec.templates)))], rng, k)
            title, sent = d["facts"][int(rng.integers(2))]
            if title in titles:
                continue
            titles.add(title)
            paras.insert(int(rng.integers(len(paras) + 1)), (title, [sent]))
        out.append(Sample(
            id=f"synth-{spec.seed}-{n:05d}",
            paragraphs=paras,
            answer=c["a"],
            question=c["q"],
            supporting_facts=[(t1, 0), (t2, 0)],
            keywords=KeywordSet(c["qk"], c["dk"]),
            setting=spec.setting,
            meta={"template": template},
        ))
    return out
