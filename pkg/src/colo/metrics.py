"""Lexical summary metrics (ROUGE-1/2, ROUGE-L, JS-2) plus discriminators.

All operations are pure functions of the two token sequences; no stemming,
no stopword removal, F-measure with beta=1.  ROUGE-L uses summary-level LCS.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum


@dataclass(frozen=True)
class MetricScore:
    precision: float
    recall: float
    f1: float


class DiscriminatorKind(Enum):
    ROUGE12_MEAN = "rouge12mean"
    ROUGE_L = "rougel"
    JS2_COMPLEMENT = "js2complement"


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0.0 else 2.0 * p * r / (p + r)


def ngram_counts(tokens, n: int) -> Counter:
    """Multiset of n-token tuples; each tuple maps to its occurrence count."""
    if n < 1:
        raise ValueError(f"ngram order must be >= 1, got {n}")
    toks = list(tokens)
    return Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))


def rouge_n(cand, ref, n: int) -> MetricScore:
    cc = ngram_counts(cand, n)
    rc = ngram_counts(ref, n)
    overlap = sum(min(cnt, rc[g]) for g, cnt in cc.items())
    total_c = sum(cc.values())
    total_r = sum(rc.values())
    p = overlap / total_c if total_c else 0.0
    r = overlap / total_r if total_r else 0.0
    return MetricScore(p, r, _f1(p, r))


def _lcs_len(a: list, b: list) -> int:
    if not a or not b:
        return 0
    # rolling single-row DP keeps this O(min(|a|,|b|)) in memory
    if len(b) > len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(cand, ref) -> MetricScore:
    c = list(cand)
    r = list(ref)
    ell = _lcs_len(c, r)
    p = ell / len(c) if c else 0.0
    rec = ell / len(r) if r else 0.0
    return MetricScore(p, rec, _f1(p, rec))


def js2_divergence(cand, ref) -> float:
    """Base-2 Jensen-Shannon divergence of the two bigram distributions.

    Either side having no bigrams is treated as maximal divergence (1.0).
    """
    cc = ngram_counts(cand, 2)
    rc = ngram_counts(ref, 2)
    tc = sum(cc.values())
    tr = sum(rc.values())
    if tc == 0 or tr == 0:
        return 1.0
    support = set(cc) | set(rc)
    js = 0.0
    for g in support:
        p = cc[g] / tc
        q = rc[g] / tr
        m = 0.5 * (p + q)
        if p > 0.0:
            js += 0.5 * p * math.log2(p / m)
        if q > 0.0:
            js += 0.5 * q * math.log2(q / m)
    # clamp fp residue so callers can rely on [0, 1]
    return min(max(js, 0.0), 1.0)


def discriminator_score(cand_tokens, ref_tokens, kind: DiscriminatorKind) -> float:
    """Candidate quality under the chosen discriminator; higher is better."""
    if kind is DiscriminatorKind.ROUGE12_MEAN:
        r1 = rouge_n(cand_tokens, ref_tokens, 1).f1
        r2 = rouge_n(cand_tokens, ref_tokens, 2).f1
        return (r1 + r2) / 2.0
    if kind is DiscriminatorKind.ROUGE_L:
        return rouge_l(cand_tokens, ref_tokens).f1
    if kind is DiscriminatorKind.JS2_COMPLEMENT:
        return 1.0 - js2_divergence(cand_tokens, ref_tokens)
    raise ValueError(f"unknown discriminator kind: {kind!r}")
