"""Candidate enumeration, ranking, oracle labels, and baselines.

The exhaustive subset search in this file doubles as the oracle for greedy
selection; candidate counts are checked against binomial coefficients
computed independently with math.comb.
"""

import math
import random
from itertools import combinations

import pytest

from colo.candidates import (
    Candidate,
    CandidateSpec,
    candidate_tokens,
    clip_topk,
    enumerate_candidates,
    exhaustive_best_subset,
    greedy_oracle_labels,
    infer_candidate_counts,
    lead,
    oracle_candidate,
    rank_candidates,
)
from colo.corpus import Document, Vocabulary
from colo.errors import ColoError
from colo.metrics import DiscriminatorKind, discriminator_score

R12 = DiscriminatorKind.ROUGE12_MEAN


def make_doc(sentences, reference, doc_id="d"):
    return Document(
        id=doc_id,
        sentences=sentences,
        reference=reference,
        raw_sentences=[" ".join(map(str, s)) for s in sentences],
    )


def rand_doc(rng, n_sents, alpha=6, doc_id="d"):
    sents = [
        [7 + rng.randrange(alpha) for _ in range(rng.randint(3, 6))] for _ in range(n_sents)
    ]
    ref = [7 + rng.randrange(alpha) for _ in range(rng.randint(6, 10))]
    return make_doc(sents, ref, doc_id)


def test_candidate_spec_normalizes_and_validates():
    spec = CandidateSpec(nums=(3, 2, 3), n_prime=6)
    assert spec.nums == (2, 3)
    with pytest.raises(ColoError, match=">= 1"):
        CandidateSpec(nums=(), n_prime=4)
    with pytest.raises(ColoError, match=">= 1"):
        CandidateSpec(nums=(0, 2), n_prime=4)
    with pytest.raises(ColoError, match="n_prime"):
        CandidateSpec(nums=(2, 3), n_prime=2)


def test_candidate_indices_must_increase():
    assert Candidate(indices=[0, 2]).indices == (0, 2)
    with pytest.raises(ColoError, match="strictly increasing"):
        Candidate(indices=(2, 1))
    with pytest.raises(ColoError, match="strictly increasing"):
        Candidate(indices=(1, 1))


def test_enumeration_counts_match_binomials():
    cases = [
        (5, (2, 3), 20),
        (5, (1, 2), 15),
        (8, (6,), 28),
        (8, (6, 7), 36),
    ]
    for n_prime, nums, want in cases:
        pool = tuple(range(n_prime))
        cands = enumerate_candidates(pool, CandidateSpec(nums=nums, n_prime=n_prime))
        assert len(cands) == want
        assert want == sum(math.comb(n_prime, k) for k in nums)
        seen = {c.indices for c in cands}
        assert len(seen) == len(cands)
        for c in cands:
            assert set(c.indices) <= set(pool)
            assert len(c.indices) in nums


def test_enumeration_skips_oversized_counts():
    # only the size-2 combinations survive a 3-element pool
    cands = enumerate_candidates((0, 1, 2), CandidateSpec(nums=(2, 5), n_prime=5))
    assert sorted(c.indices for c in cands) == [(0, 1), (0, 2), (1, 2)]


def test_enumeration_degenerate_fallback():
    # every count too large: fall back to the single all-sentence candidate
    cands = enumerate_candidates((0, 1), CandidateSpec(nums=(3,), n_prime=3))
    assert [c.indices for c in cands] == [(0, 1)]
    with pytest.raises(ColoError, match="empty"):
        enumerate_candidates((), CandidateSpec(nums=(1,), n_prime=1))


def test_clip_topk():
    assert clip_topk([0.1, 0.9, 0.5, 0.9], 2) == (1, 3)
    # exact ties go to the lower index
    assert clip_topk([0.5, 0.5, 0.5], 2) == (0, 1)
    assert clip_topk([0.2, 0.8], 5) == (0, 1)
    with pytest.raises(ColoError, match="n_prime"):
        clip_topk([0.5], 0)


def test_candidate_tokens_concatenates_in_order():
    doc = make_doc([[7, 8], [9], [10, 11]], reference=[7])
    assert candidate_tokens(doc, (0, 2)) == [7, 8, 10, 11]
    assert candidate_tokens(doc, ()) == []


def test_rank_candidates_orders_and_ties():
    # sentences 0 and 1 are identical, so their singletons tie and the
    # lower index tuple must come first
    doc = make_doc([[7, 8], [7, 8], [9, 10]], reference=[7, 8])
    cands = [Candidate(indices=(2,)), Candidate(indices=(1,)), Candidate(indices=(0,))]
    ranked = rank_candidates(cands, doc, R12)
    assert [c.indices for c in ranked] == [(0,), (1,), (2,)]
    assert [c.rank for c in ranked] == [1, 2, 3]
    assert ranked[0].disc_score == ranked[1].disc_score == 1.0
    scores = [c.disc_score for c in ranked]
    assert scores == sorted(scores, reverse=True)
    with pytest.raises(ColoError, match="empty"):
        rank_candidates([], doc, R12)


def test_rank_candidates_input_order_invariant():
    rng = random.Random(0)
    doc = rand_doc(rng, 6)
    base = enumerate_candidates(tuple(range(6)), CandidateSpec(nums=(2,), n_prime=6))
    a = rank_candidates(list(base), doc, R12)
    shuffled = list(base)
    rng.shuffle(shuffled)
    b = rank_candidates(shuffled, doc, R12)
    assert [c.indices for c in a] == [c.indices for c in b]


def test_oracle_candidate_dominates():
    rng = random.Random(1)
    for _ in range(10):
        doc = rand_doc(rng, 6)
        cands = enumerate_candidates(tuple(range(6)), CandidateSpec(nums=(1, 2), n_prime=6))
        best = oracle_candidate(cands, doc, R12)
        for c in cands:
            assert best.disc_score >= c.disc_score


def test_exhaustive_best_subset_brute_force():
    rng = random.Random(2)
    for _ in range(20):
        doc = rand_doc(rng, rng.randint(4, 6))
        got_idx, got_score = exhaustive_best_subset(doc, R12, max_sents=2)
        scored = []
        for size in (1, 2):
            for combo in combinations(range(len(doc.sentences)), size):
                scored.append(
                    (combo, discriminator_score(candidate_tokens(doc, combo), doc.reference, R12))
                )
        best = max(s for _, s in scored)
        assert got_score == best
        # among all maximizers the lexicographically smallest tuple wins
        assert got_idx == min(c for c, s in scored if s == best)


def test_greedy_never_beats_exhaustive():
    rng = random.Random(3)
    for _ in range(20):
        doc = rand_doc(rng, rng.randint(4, 7))
        labels = greedy_oracle_labels(doc, R12, max_sents=2)
        sel = tuple(i for i, y in enumerate(labels) if y)
        greedy_score = discriminator_score(candidate_tokens(doc, sel), doc.reference, R12)
        _, best = exhaustive_best_subset(doc, R12, max_sents=2)
        assert greedy_score <= best + 1e-12
        assert 1 <= len(sel) <= 2


def test_greedy_first_pick_always_accepted():
    # reference shares nothing with the document: every score is zero, yet
    # one sentence (the lowest index) must still be selected
    doc = make_doc([[7], [8], [9]], reference=[10])
    assert greedy_oracle_labels(doc, R12, max_sents=2) == [1, 0, 0]


def test_greedy_requires_strict_improvement():
    # the twin of sentence 0 adds no score, so it must not be selected
    doc = make_doc([[7, 8], [7, 8]], reference=[7, 8])
    assert greedy_oracle_labels(doc, R12, max_sents=2) == [1, 0]


def test_greedy_max_sents():
    doc = make_doc([[7], [8], [9]], reference=[7, 8, 9])
    labels = greedy_oracle_labels(doc, R12, max_sents=1)
    assert sum(labels) == 1
    with pytest.raises(ColoError, match="max_sents"):
        greedy_oracle_labels(doc, R12, max_sents=0)


def test_lead():
    doc = make_doc([[7], [8], [9]], reference=[7])
    assert lead(doc, 2).indices == (0, 1)
    assert lead(doc, 5).indices == (0, 1, 2)
    with pytest.raises(ColoError, match="k must be"):
        lead(doc, 0)


def test_infer_candidate_counts():
    # five documents need two sentences, one needs a single sentence
    docs = [
        make_doc([[7 + 2 * k], [8 + 2 * k], [20]], reference=[7 + 2 * k, 8 + 2 * k], doc_id=f"d{k}")
        for k in range(3)
    ]
    docs.append(make_doc([[19], [20], [21]], reference=[19], doc_id="single"))
    got = infer_candidate_counts(docs, R12, max_sents=3)
    assert got == (1, 2)
    only_two = infer_candidate_counts(docs[:3], R12, max_sents=3)
    assert only_two == (2,)
