"""Generation metrics: BLEU-4, ROUGE-L, exact-match METEOR, keyword F1, QA EM/F1."""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

from .model import KeywordSet
from .text import tokenize


def _toks(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: Sequence, references: Sequence) -> float:
    """Corpus BLEU-4 with brevity penalty.

    Smoothing: an order n >= 2 with zero clipped matches uses (0+1)/(total+1).
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    hyps = [_toks(h) for h in hypotheses]
    refs = [_toks(r) for r in references]
    if any(len(r) == 0 for r in refs):
        raise ValueError("empty reference")
    matches = [0] * 4
    totals = [0] * 4
    for h, r in zip(hyps, refs):
        for n in range(1, 5):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(0, len(h) - n + 1)
    c = sum(len(h) for h in hyps)
    r = sum(len(x) for x in refs)
    if c == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(4):
        m, t = matches[n], totals[n]
        if n > 0 and m == 0:
            m, t = 1, t + 1
        log_p += math.log(m / t) / 4
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_p)


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis, reference) -> float:
    h, r = _toks(hypothesis), _toks(reference)
    if not h or not r:
        return 0.0
    lcs = lcs_length(h, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(h), lcs / len(r)
    return 2 * p * rec / (p + rec)


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    pairs = sorted(pairs)
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (i == pairs[k - 1][0] + 1 and j == pairs[k - 1][1] + 1):
            chunks += 1
    return chunks


def _align(h: list[str], r: list[str], budget: int = 200_000) -> list[tuple[int, int]]:
    """Maximum exact unigram alignment with the fewest chunks.

    Exhaustive over ambiguous (repeated-token) positions; falls back to a
    left-to-right greedy alignment when the search space exceeds ``budget``.
    """
    options = []
    for i, tok in enumerate(h):
        options.append([j for j, t in enumerate(r) if t == tok])
    target = sum((Counter(h) & Counter(r)).values())
    space = 1
    for o in options:
        space *= len(o) + 1
    if space > budget:
        used, pairs = set(), []
        for i, opts in enumerate(options):
            prev = pairs[-1][1] if pairs else -2
            choices = [j for j in opts if j not in used]
            if choices:
                j = prev + 1 if prev + 1 in choices else choices[0]
                used.add(j)
                pairs.append((i, j))
        return pairs[:target]

    best: list = [None, math.inf]

    def search(i, used, pairs, remaining):
        if len(pairs) + remaining < target:
            return
        if i == len(h):
            if len(pairs) == target:
                c = _count_chunks(pairs)
                if c < best[1]:
                    best[0], best[1] = list(pairs), c
            return
        for j in options[i]:
            if j not in used:
                used.add(j)
                pairs.append((i, j))
                search(i + 1, used, pairs, remaining - 1)
                pairs.pop()
                used.discard(j)
        search(i + 1, used, pairs, remaining - 1)

    search(0, set(), [], len(h))
    return best[0] or []


def meteor_exact(hypothesis, reference) -> float:
    """METEOR restricted to exact unigram matches (no stemming or synonyms)."""
    h, r = _toks(hypothesis), _toks(reference)
    if not h or not r:
        return 0.0
    pairs = _align(h, r)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, rec = m / len(h), m / len(r)
    f_mean = 10 * p * rec / (rec + 9 * p)
    penalty = 0.5 * (_count_chunks(pairs) / m) ** 3
    return f_mean * (1 - penalty)


def _kw_tokens(ks: KeywordSet, role_sensitive: bool) -> Counter:
    out: Counter = Counter()
    for role, items in (("q", ks.question), ("d", ks.document)):
        for k in items:
            for t in tokenize(k):
                out[(role, t) if role_sensitive else t] += 1
    return out


def token_f1(predicted: KeywordSet, gold: KeywordSet, role_sensitive: bool = False) -> float:
    p, g = _kw_tokens(predicted, role_sensitive), _kw_tokens(gold, role_sensitive)
    np_, ng = sum(p.values()), sum(g.values())
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    overlap = sum((p & g).values())
    if overlap == 0:
        return 0.0
    prec, rec = overlap / np_, overlap / ng
    return 2 * prec * rec / (prec + rec)


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def qa_em_f1(predicted: str, gold: str) -> tuple[float, float]:
    p, g = normalize_answer(predicted), normalize_answer(gold)
    em = float(p == g)
    pt, gt = p.split(), g.split()
    if not pt or not gt:
        return em, float(pt == gt)
    common = sum((Counter(pt) & Counter(gt)).values())
    if common == 0:
        return em, 0.0
    prec, rec = common / len(pt), common / len(gt)
    return em, 2 * prec * rec / (prec + rec)


@dataclass
class MetricReport:
    bleu4: float
    rouge_l: float
    meteor: float
    token_f1: float
    em: float
    qa_f1: float
    n: int

    def scaled(self) -> dict:
        d = asdict(self)
        return {k: (v * 100 if k != "n" else v) for k, v in d.items()}


def report(hypotheses: Sequence[str], references: Sequence[str],
           predicted_keywords: Sequence[KeywordSet] | None = None,
           gold_keywords: Sequence[KeywordSet] | None = None) -> MetricReport:
    """Corpus-level scores; ``em``/``qa_f1`` compare hypotheses with references as answers."""
    n = len(hypotheses)
    if n == 0:
        raise ValueError("no samples")
    kf1 = 0.0
    if predicted_keywords is not None and gold_keywords is not None:
        kf1 = sum(token_f1(p, g) for p, g in zip(predicted_keywords, gold_keywords)) / n
    ems = [qa_em_f1(h, r) for h, r in zip(hypotheses, references)]
    return MetricReport(
        bleu4=bleu4(hypotheses, references),
        rouge_l=sum(rouge_l(h, r) for h, r in zip(hypotheses, references)) / n,
        meteor=sum(meteor_exact(h, r) for h, r in zip(hypotheses, references)) / n,
        token_f1=kf1,
        em=sum(e for e, _ in ems) / n,
        qa_f1=sum(f for _, f in ems) / n,
        n=n,
    )
