import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpkg.metrics import bleu4, lcs_length, meteor_exact, qa_em_f1, report, rouge_l, token_f1
from dpkg.model import KeywordSet

from .oracles.brute import bleu4_brute, lcs_brute, meteor_brute, rouge_l_brute

toks = st.lists(st.sampled_from("a b c d e".split()), max_size=8)


def random_pairs(n, seed, vocab=6, lo=1, hi=10):
    r = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab)]
    mk = lambda: [words[i] for i in r.integers(0, vocab, r.integers(lo, hi + 1))]  # noqa: E731
    return [(mk(), mk()) for _ in range(n)]


# ---------------------------------------------------------------- BLEU


def test_bleu_matches_brute_force():
    pairs = random_pairs(100, 0)
    for k in range(0, 100, 10):
        hyps, refs = [p[0] for p in pairs[k:k + 10]], [p[1] for p in pairs[k:k + 10]]
        assert bleu4(hyps, refs) == pytest.approx(bleu4_brute(hyps, refs), abs=1e-9)
    for h, r in pairs:
        assert bleu4([h], [r]) == pytest.approx(bleu4_brute([h], [r]), abs=1e-9)


def test_bleu_examples():
    assert bleu4(["the cat sat on the mat"], ["the cat sat on the mat"]) == 1.0
    assert bleu4([""], ["the cat sat"]) == 0.0
    with pytest.raises(ValueError, match="empty reference"):
        bleu4(["a b"], [""])
    with pytest.raises(ValueError):
        bleu4(["a"], ["a", "b"])


@given(st.lists(st.tuples(toks, toks.filter(bool)), min_size=1, max_size=4))
def test_bleu_in_unit_interval(pairs):
    assert 0.0 <= bleu4([h for h, _ in pairs], [r for _, r in pairs]) <= 1.0 + 1e-12


# ---------------------------------------------------------------- ROUGE-L


def test_rouge_matches_brute_force():
    for h, r in random_pairs(100, 1):
        assert lcs_length(h, r) == lcs_brute(h, r)
        assert rouge_l(h, r) == pytest.approx(rouge_l_brute(h, r), abs=1e-9)


def test_rouge_examples(frozen):
    assert rouge_l("a b c d", "a c b d") == frozen["rouge_l_abcd_acbd"]
    assert rouge_l("a b c", "a b c") == 1.0
    assert rouge_l("a b", "c d") == 0.0
    assert rouge_l("", "c d") == 0.0


@given(toks, toks.filter(bool), st.data())
def test_rouge_recall_monotone_under_matching_append(h, r, data):
    tok = data.draw(st.sampled_from(r))
    assert lcs_length(h + [tok], r) / len(r) >= lcs_length(h, r) / len(r)


# ---------------------------------------------------------------- METEOR


@pytest.mark.parametrize("n", [1, 2, 4, 7])
def test_meteor_identical(n, frozen):
    s = " ".join(f"w{i}" for i in range(n))
    assert meteor_exact(s, s) == pytest.approx(frozen["meteor_identical"][str(n)], abs=1e-12)


def test_meteor_examples(frozen):
    case = frozen["meteor_single_match"]
    assert meteor_exact(case["hyp"], case["ref"]) == pytest.approx(case["value"], abs=1e-12)
    assert meteor_exact("a b", "c d") == 0.0


def test_meteor_matches_brute_force():
    for h, r in random_pairs(100, 2, vocab=4, hi=7):
        assert meteor_exact(h, r) == pytest.approx(meteor_brute(h, r), abs=1e-12), (h, r)


# ---------------------------------------------------------------- keyword F1 and QA


def test_token_f1(frozen):
    assert token_f1(KeywordSet(["a", "b"]), KeywordSet(["b", "c"])) == frozen["token_f1_ab_bc"]
    ks = KeywordSet(["when", "film director"], ["born"])
    assert token_f1(ks, ks) == 1.0
    assert token_f1(KeywordSet(), ks) == 0.0
    assert token_f1(KeywordSet(), KeywordSet()) == 1.0


def test_token_f1_role_sensitive():
    a, b = KeywordSet(["x"], ["y"]), KeywordSet(["y"], ["x"])
    assert token_f1(a, b) == 1.0
    assert token_f1(a, b, role_sensitive=True) == 0.0


def test_qa_em_f1():
    assert qa_em_f1("The July 26, 1959", "july 26 1959") == (1.0, 1.0)
    assert qa_em_f1("Kevin Spacey", "Kevin Spacey") == (1.0, 1.0)
    assert qa_em_f1("London", "Paris") == (0.0, 0.0)
    em, f1 = qa_em_f1("Kevin Spacey Fowler", "Kevin Spacey")
    assert em == 0.0 and f1 == pytest.approx(0.8)


@given(st.text(max_size=20), st.text(max_size=20))
def test_qa_em_implies_f1(a, b):
    em, f1 = qa_em_f1(a, b)
    assert 0 <= f1 <= 1 and (em == 0 or f1 == 1)


def test_report():
    rep = report(["a b c d", "x y"], ["a b c d", "x z"], [KeywordSet(["a"])] * 2, [KeywordSet(["a"])] * 2)
    assert rep.n == 2 and rep.token_f1 == 1.0 and rep.em == 0.5
    for v in (rep.bleu4, rep.rouge_l, rep.meteor, rep.qa_f1):
        assert 0 <= v <= 1
    assert rep.scaled()["rouge_l"] == pytest.approx(100 * rep.rouge_l)
    with pytest.raises(ValueError):
        report([], [])
