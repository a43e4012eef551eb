"""Hand-worked metric values plus property fuzzing.

Every frozen number below was computed by hand from the metric definitions
(clipped n-gram overlap, summary-level LCS, base-2 Jensen-Shannon over
bigrams) before the assertions were written.
"""

import math
import random
from collections import Counter

import pytest

from colo.corpus import Vocabulary, tokenize
from colo.metrics import (
    DiscriminatorKind,
    discriminator_score,
    js2_divergence,
    ngram_counts,
    rouge_l,
    rouge_n,
)


def toks(text):
    vocab = Vocabulary(sorted({"the", "cat", "sat", "on", "mat"}))
    return tokenize(text, vocab)


def test_ngram_counts():
    assert ngram_counts(["a", "b", "a"], 1) == Counter({("a",): 2, ("b",): 1})
    assert ngram_counts(["a", "b", "a"], 2) == Counter({("a", "b"): 1, ("b", "a"): 1})
    assert ngram_counts(["a", "b", "a"], 3) == Counter({("a", "b", "a"): 1})
    assert ngram_counts(["a", "b", "a"], 4) == Counter()
    assert ngram_counts([], 1) == Counter()
    with pytest.raises(ValueError):
        ngram_counts(["a"], 0)


def test_rouge1_worked_example():
    # cand "the cat sat" vs ref "the cat sat on the mat"
    # unigram overlap 3, |cand| 3, |ref| 6
    s = rouge_n(toks("the cat sat"), toks("the cat sat on the mat"), 1)
    assert s.precision == 1.0
    assert s.recall == 0.5
    assert math.isclose(s.f1, 2.0 / 3.0)


def test_rouge2_worked_example():
    # bigram overlap 2 of cand's 2, ref has 5 bigrams
    s = rouge_n(toks("the cat sat"), toks("the cat sat on the mat"), 2)
    assert s.precision == 1.0
    assert s.recall == 0.4
    assert math.isclose(s.f1, 4.0 / 7.0)


def test_rouge1_clipping():
    # repeated candidate token must not be credited more than ref count
    s = rouge_n(["a", "a", "a"], ["a"], 1)
    assert math.isclose(s.precision, 1.0 / 3.0)
    assert s.recall == 1.0
    assert s.f1 == 0.5


def test_rouge2_clipping():
    s = rouge_n(["a", "b", "a", "b"], ["a", "b"], 2)
    assert math.isclose(s.precision, 1.0 / 3.0)
    assert s.recall == 1.0
    assert s.f1 == 0.5


def test_rouge_empty_sides():
    assert rouge_n([], ["a"], 1) == rouge_n([], ["a"], 1)
    assert rouge_n([], ["a"], 1).f1 == 0.0
    assert rouge_n(["a"], [], 1).f1 == 0.0
    assert rouge_l([], ["a"]).f1 == 0.0


def test_rougel_worked_examples():
    # "cat the mat" vs "the cat sat on the mat": LCS = cat..the..mat, len 3
    s = rouge_l(toks("cat the mat"), toks("the cat sat on the mat"))
    assert s.precision == 1.0
    assert s.recall == 0.5
    assert math.isclose(s.f1, 2.0 / 3.0)
    # skip in the middle: LCS(a c, a b c) = 2
    s = rouge_l(["a", "c"], ["a", "b", "c"])
    assert s.precision == 1.0
    assert math.isclose(s.recall, 2.0 / 3.0)
    assert math.isclose(s.f1, 0.8)
    # order matters: LCS(b a, a b) = 1
    assert rouge_l(["b", "a"], ["a", "b"]).f1 == 0.5


def test_js2_worked_examples():
    # {ab} vs {ab, bc}: P=(1,0) Q=(.5,.5) M=(.75,.25)
    # JS = .5*log2(4/3)/1 ... = 0.31127812...
    got = js2_divergence(["a", "b"], ["a", "b", "c"])
    assert math.isclose(got, 0.3112781244591328, rel_tol=0, abs_tol=1e-12)
    # disjoint-but-overlapping supports: {ab,bc} vs {bc,cd} -> exactly 0.5
    got = js2_divergence(["a", "b", "c"], ["b", "c", "d"])
    assert math.isclose(got, 0.5, rel_tol=0, abs_tol=1e-12)


def test_js2_degenerate_rules():
    # a single token has no bigrams: maximal divergence even for equal inputs
    assert js2_divergence(["a"], ["a"]) == 1.0
    assert js2_divergence([], ["a", "b"]) == 1.0
    assert js2_divergence(["a", "b"], []) == 1.0
    # identical inputs with at least one bigram
    assert js2_divergence(["a", "b"], ["a", "b"]) == 0.0


def test_discriminator_rouge12_mean_worked():
    # mean of 2/3 and 4/7 = 13/21
    got = discriminator_score(
        toks("the cat sat"), toks("the cat sat on the mat"), DiscriminatorKind.ROUGE12_MEAN
    )
    assert math.isclose(got, 13.0 / 21.0)


def test_discriminator_variants_agree_with_metrics():
    c = ["a", "b", "c"]
    r = ["b", "c", "d"]
    assert discriminator_score(c, r, DiscriminatorKind.ROUGE_L) == rouge_l(c, r).f1
    assert discriminator_score(c, r, DiscriminatorKind.JS2_COMPLEMENT) == 1.0 - js2_divergence(c, r)
    # identical sequences should be a perfect score under every discriminator
    for kind in DiscriminatorKind:
        assert discriminator_score(c, c, kind) == 1.0


def test_discriminator_kind_values():
    assert DiscriminatorKind.ROUGE12_MEAN.value == "rouge12mean"
    assert DiscriminatorKind.ROUGE_L.value == "rougel"
    assert DiscriminatorKind.JS2_COMPLEMENT.value == "js2complement"


def test_metric_fuzz_properties():
    rng = random.Random(0)
    for _ in range(1000):
        alpha = rng.randint(2, 6)
        a = [rng.randrange(alpha) for _ in range(rng.randint(0, 12))]
        b = [rng.randrange(alpha) for _ in range(rng.randint(0, 12))]
        for n in (1, 2):
            sa = rouge_n(a, b, n)
            sb = rouge_n(b, a, n)
            for v in (sa.precision, sa.recall, sa.f1):
                assert 0.0 <= v <= 1.0
            # swapping the arguments swaps precision and recall exactly
            assert sa.precision == sb.recall
            assert sa.recall == sb.precision
            assert sa.f1 == sb.f1
            # perfect f1 iff the (nonempty) n-gram multisets coincide
            ca, cb = ngram_counts(a, n), ngram_counts(b, n)
            if ca or cb:
                assert (sa.f1 == 1.0) == (ca == cb)
            else:
                assert sa.f1 == 0.0
            if len(a) >= n:
                assert rouge_n(a, a, n).f1 == 1.0
        sl = rouge_l(a, b)
        assert 0.0 <= sl.f1 <= 1.0
        assert sl.f1 == rouge_l(b, a).f1
        if a:
            assert rouge_l(a, a).f1 == 1.0
        j = js2_divergence(a, b)
        assert 0.0 <= j <= 1.0
        assert abs(j - js2_divergence(b, a)) < 1e-12
        if len(a) >= 2:
            assert js2_divergence(a, a) == 0.0
        else:
            assert js2_divergence(a, b) == 1.0
