"""Word-level vocabulary and tokenization."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

PAD, BOS, EOS, UNK, QES, DOC = "<pad>", "<bos>", "<eos>", "<unk>", "<qes>", "<doc>"
RESERVED = (PAD, BOS, EOS, UNK, QES, DOC)

PREFIXES = {
    "document": "Document: ",
    "answer": "Answer: ",
    "question": "Question: ",
    "keywords": "",
}

_TOKEN_RE = re.compile(r"<qes>|<doc>|\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and punctuation; punctuation kept."""
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(tokenize(text))


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    kind: str

    def __len__(self) -> int:
        return len(self.ids)


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocab must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocab")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    pad_id = property(lambda self: self.stoi[PAD])
    bos_id = property(lambda self: self.stoi[BOS])
    eos_id = property(lambda self: self.stoi[EOS])
    unk_id = property(lambda self: self.stoi[UNK])
    qes_id = property(lambda self: self.stoi[QES])
    doc_id = property(lambda self: self.stoi[DOC])

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def ids(self, tokens: Iterable[str]) -> list[int]:
        unk = self.unk_id
        return [self.stoi.get(t, unk) for t in tokens]

    def prefix_ids(self, kind: str) -> list[int]:
        return self.ids(tokenize(PREFIXES[kind]))

    def encode(self, text: str, kind: str) -> TokenSeq:
        if kind not in PREFIXES:
            raise ValueError(f"unknown sequence kind {kind!r}")
        return TokenSeq(tuple(self.prefix_ids(kind) + self.ids(tokenize(text))), kind)

    def decode(self, ids: Iterable[int]) -> str:
        skip = {self.pad_id, self.bos_id, self.eos_id}
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.itos):
                raise ValueError(f"token id {i} out of range")
            if i not in skip:
                out.append(self.itos[i])
        return " ".join(out)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def _texts(item) -> list[str]:
    if isinstance(item, str):
        return [item]
    return list(item.texts())


def build_vocab(corpus: Iterable, min_count: int = 1) -> Vocab:
    """Build a vocab from strings or samples (anything with ``texts()``)."""
    counts: Counter[str] = Counter()
    n = 0
    for item in corpus:
        n += 1
        for text in _texts(item):
            counts.update(tokenize(text))
    if n == 0:
        raise ValueError("empty corpus")
    tokens = list(RESERVED)
    for kind in ("document", "answer", "question"):
        for t in tokenize(PREFIXES[kind]):
            if t not in tokens:
                tokens.append(t)
    seen = set(tokens)
    for tok, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_count and tok not in seen:
            tokens.append(tok)
            seen.add(tok)
    return Vocab(tokens)
