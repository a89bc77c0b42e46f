"""Rule-based keyword annotation with separate question and document roles.

Candidates (entity-like runs, dates/numbers, quoted spans, content-word
chunks) are pulled from the question and from the relevant sentences.
Candidates shared by both become question keywords, the rest of the
relevant-sentence candidates become document keywords, and question-only
candidates are dropped (``v1``) or kept as question keywords (``v2``).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .model import KeywordSet
from .text import tokenize

log = logging.getLogger(__name__)

INTERROGATIVES = frozenset({"what", "which", "who", "whom", "whose", "when", "where", "why", "how"})

STOPWORDS = frozenset("""
a an the and or but nor so yet for of in on at to from by with about as into onto upon over under
between through during before after above below up down out off than then there here this that these
those it its it's he she they them his her their our we us you your i me my mine is are was were be
been being am do does did done doing have has had having will would shall should can could may might
must not no yes also too very just only both either neither each every all any some such own same
other another more most less least many much few if while because although though whether until since
where when what which who whom whose why how one ones s t
""".split()) | INTERROGATIVES

MONTHS = frozenset("""january february march april may june july august september october november december
jan feb mar apr jun jul aug sep sept oct nov dec""".split())

_TOK_RE = re.compile(r"\w+(?:['’-]\w+)*|[^\w\s]")
_QUOTE_RE = re.compile(r"\"([^\"]+)\"|“([^”]+)”")
_CONNECTORS = frozenset({"of", "de", "du", "la", "von", "van", "der", "and", "&"})


@dataclass(frozen=True)
class CandidateSpan:
    text: str
    source: str
    kind: str
    start: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("empty candidate")


@dataclass
class AnnotationConfig:
    version: str = "v1"
    interrogatives: frozenset = field(default_factory=lambda: INTERROGATIVES)
    max_keyword_tokens: int = 8

    def __post_init__(self):
        if self.version not in ("v1", "v2"):
            raise ValueError(f"unknown annotation version {self.version!r}")
        self.interrogatives = frozenset(self.interrogatives)
        if any(w != w.lower() for w in self.interrogatives):
            raise ValueError("interrogatives must be lowercase")


def _is_num(tok: str) -> bool:
    return tok.replace(",", "").replace(".", "").isdigit()


def extract_candidates(text: str, source: str = "relevant_sentence") -> list[CandidateSpan]:
    """Heuristic chunker; spans are non-overlapping, deduplicated, in text order."""
    toks = [(m.group(), m.start(), m.end()) for m in _TOK_RE.finditer(text)]
    n = len(toks)
    taken = [False] * n
    spans: list[tuple[int, int, str]] = []  # token [i, j) and kind

    def claim(i, j, kind):
        spans.append((i, j, kind))
        for k in range(i, j):
            taken[k] = True

    # quoted spans
    for m in _QUOTE_RE.finditer(text):
        a, b = m.span(1) if m.group(1) is not None else m.span(2)
        idx = [k for k, (_, s, e) in enumerate(toks) if s >= a and e <= b]
        if idx and not any(taken[k] for k in idx):
            claim(idx[0], idx[-1] + 1, "quoted")

    # dates and numbers
    i = 0
    while i < n:
        t = toks[i][0]
        if taken[i] or not (t.lower() in MONTHS and t[0].isupper() or _is_num(t)):
            i += 1
            continue
        j = i + 1
        while j < n and not taken[j]:
            nxt = toks[j][0]
            if _is_num(nxt) or (nxt.lower() in MONTHS and nxt[0].isupper()):
                j += 1
            elif nxt == "," and j + 1 < n and _is_num(toks[j + 1][0]) and len(toks[j + 1][0]) == 4:
                j += 1
            else:
                break
        if t.lower() in MONTHS and j == i + 1 and t.lower() == "may":
            i += 1  # bare "May" is usually the modal verb
            continue
        claim(i, j, "number")
        i = j

    # capitalized runs
    i = 0
    while i < n:
        t = toks[i][0]
        if taken[i] or not t[0].isupper():
            i += 1
            continue
        j = i + 1
        while j < n and not taken[j]:
            nxt = toks[j][0]
            if nxt[0].isupper() or (nxt[0].isdigit() and toks[j - 1][0][0].isupper()):
                j += 1
            elif (nxt.lower() in _CONNECTORS and j + 1 < n and not taken[j + 1]
                  and toks[j + 1][0][0].isupper()):
                j += 2
            else:
                break
        a = i
        while a < j and toks[a][0].lower() in STOPWORDS:
            a += 1
        if a < j:
            claim(a, j, "entity")
        i = j

    # content-word chunks
    i = 0
    while i < n:
        t = toks[i][0]
        if taken[i] or not t[0].isalpha() or t.lower() in STOPWORDS:
            i += 1
            continue
        j = i + 1
        while j < n and not taken[j] and toks[j][0][0].isalpha() and toks[j][0].lower() not in STOPWORDS:
            j += 1
        claim(i, j, "noun_chunk")
        i = j

    out, seen = [], set()
    for i, j, kind in sorted(spans):
        surface = text[toks[i][1]:toks[j - 1][2]]
        key = tuple(tokenize(surface))
        if key and key not in seen:
            seen.add(key)
            out.append(CandidateSpan(surface, source, kind, toks[i][1]))
    return out


def _contains(hay: Sequence[str], needle: Sequence[str]) -> bool:
    m = len(needle)
    return m > 0 and any(tuple(hay[k:k + m]) == tuple(needle) for k in range(len(hay) - m + 1))


def relevant_sentences(sample) -> tuple[list[str], str | None]:
    """Supporting-fact sentences; falls back to answer-bearing sentences.

    Returns ``(sentences, issue)`` where ``issue`` describes why the
    fallback was used (``None`` when the supporting facts were usable).
    """
    issue = None
    if sample.supporting_facts:
        try:
            return sample.supporting_sentences(), None
        except IndexError as e:
            issue = str(e)
    else:
        issue = f"sample {sample.id}: no supporting facts"
    ans = sample.answer.lower()
    found = [s for _, sents in sample.paragraphs for s in sents if ans in s.lower()]
    log.warning("%s; using %d answer-bearing sentences", issue, len(found))
    return found, issue


def first_interrogative(question: str, interrogatives: Iterable[str] = INTERROGATIVES) -> str | None:
    words = set(interrogatives)
    for t in tokenize(question):
        if t in words:
            return t
    return None


Extractor = Callable[[str, str], list]


def annotate(sample, cfg: AnnotationConfig | None = None, extractor: Extractor = extract_candidates) -> KeywordSet:
    cfg = cfg or AnnotationConfig()
    sents, _ = relevant_sentences(sample)
    rel_toks = [tokenize(s) for s in sents]
    q_toks = tokenize(sample.question)

    def ok(c) -> bool:
        toks = tokenize(c.text)
        return 0 < len(toks) <= cfg.max_keyword_tokens and not (len(toks) == 1 and toks[0] in cfg.interrogatives)

    rel_cands = [c for s in sents for c in extractor(s, "relevant_sentence") if ok(c)]
    q_cands = [c for c in extractor(sample.question, "question") if ok(c)]
    in_rel = lambda c: any(_contains(r, tokenize(c.text)) for r in rel_toks)  # noqa: E731

    # shared candidates, in document order; question-side spans are located in the sentences
    shared: dict[tuple, str] = {}
    for c in rel_cands:
        if _contains(q_toks, tokenize(c.text)):
            shared.setdefault(tuple(tokenize(c.text)), c.text)
    for c in q_cands:
        if in_rel(c):
            shared.setdefault(tuple(tokenize(c.text)), c.text)
    shared = dict(sorted(shared.items(), key=lambda kv: _first_position(rel_toks, list(kv[0]))))

    question_kw: list[str] = []
    wh = first_interrogative(sample.question, cfg.interrogatives)
    if wh:
        question_kw.append(wh)
    question_kw.extend(shared.values())
    if cfg.version == "v2":
        for c in q_cands:
            key = tuple(tokenize(c.text))
            if key not in shared and not in_rel(c):
                shared[key] = c.text
                question_kw.append(c.text)

    taken = {tuple(tokenize(k)) for k in question_kw}
    document_kw: list[str] = []
    for c in rel_cands:
        key = tuple(tokenize(c.text))
        if key not in taken:
            taken.add(key)
            document_kw.append(c.text)
    return KeywordSet(_unique(question_kw), _unique(document_kw))


def _first_position(rel_toks: list[list[str]], needle: list[str]) -> tuple[int, int]:
    m = len(needle)
    for si, toks in enumerate(rel_toks):
        for k in range(len(toks) - m + 1):
            if toks[k:k + m] == needle:
                return si, k
    return len(rel_toks), 0


def _unique(items: list[str]) -> list[str]:
    seen, out = set(), []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


def keyword_stats(splits) -> dict:
    """Min/max/avg keyword counts per split (``{name: samples}`` or a single list)."""
    if not isinstance(splits, dict):
        splits = {"all": splits}
    if not splits or all(len(v) == 0 for v in splits.values()):
        raise ValueError("empty corpus")
    out = {}
    for name, samples in splits.items():
        if not samples:
            continue
        rows = [(len(s.keywords.question), len(s.keywords.document)) for s in samples if s.keywords is not None]
        if not rows:
            raise ValueError(f"split {name!r} has no annotated samples")
        qs, ds = [r[0] for r in rows], [r[1] for r in rows]
        out[name] = {
            "n": len(rows),
            "question": {"min": min(qs), "max": max(qs), "avg": sum(qs) / len(qs)},
            "document": {"min": min(ds), "max": max(ds), "avg": sum(ds) / len(ds)},
        }
    return out
