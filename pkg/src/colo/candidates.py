"""Extractive candidate construction, ranking, oracle labels, and baselines.

A candidate is a strictly increasing tuple of sentence indices; its text is
the concatenation of those sentences in document order.  Tie-breaking is
uniform across the module: lower lexicographic index tuples win.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations

from .errors import ColoError
from .corpus import Document
from .metrics import DiscriminatorKind, discriminator_score


@dataclass
class CandidateSpec:
    """Allowed candidate sentence-counts N and the clip size n_prime."""

    nums: tuple[int, ...] = (2, 3)
    n_prime: int = 6

    def __post_init__(self):
        self.nums = tuple(sorted(set(int(n) for n in self.nums)))
        if not self.nums or self.nums[0] < 1:
            raise ColoError(f"candidate spec: sentence counts must be >= 1, got {self.nums}")
        if self.n_prime < max(self.nums):
            raise ColoError(
                f"candidate spec: n_prime={self.n_prime} < max(N)={max(self.nums)}"
            )


@dataclass
class Candidate:
    indices: tuple[int, ...]
    disc_score: float | None = None
    rank: int | None = None

    def __post_init__(self):
        self.indices = tuple(self.indices)
        if list(self.indices) != sorted(set(self.indices)):
            raise ColoError(f"candidate indices not strictly increasing: {self.indices}")


def candidate_tokens(doc: Document, indices) -> list[int]:
    """Concatenate the selected sentences in document order."""
    out: list[int] = []
    for i in indices:
        out.extend(doc.sentences[i])
    return out


def clip_topk(sentence_probs, n_prime: int) -> tuple[int, ...]:
    """Indices of the n_prime highest probabilities, ties to the lower index."""
    if n_prime < 1:
        raise ColoError(f"clip_topk: n_prime must be >= 1, got {n_prime}")
    probs = list(sentence_probs)
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return tuple(sorted(order[:n_prime]))


def enumerate_candidates(clipped, spec: CandidateSpec) -> list[Candidate]:
    """All size-num combinations of the clipped set, for each num in N.

    Counts larger than the clipped set are skipped; if every count is
    skipped the single all-sentence candidate is returned so degenerate
    documents still yield one candidate.
    """
    pool = tuple(sorted(clipped))
    if not pool:
        raise ColoError("enumerate_candidates: empty clipped set")
    out = []
    for num in spec.nums:
        if num > len(pool):
            continue
        out.extend(Candidate(indices=c) for c in combinations(pool, num))
    if not out:
        out.append(Candidate(indices=pool))
    return out


def rank_candidates(
    cands: list[Candidate], doc: Document, kind: DiscriminatorKind
) -> list[Candidate]:
    """Score each candidate against the reference and sort best-first."""
    if not cands:
        raise ColoError("rank_candidates: empty candidate list")
    for c in cands:
        c.disc_score = discriminator_score(
            candidate_tokens(doc, c.indices), doc.reference, kind
        )
    ranked = sorted(cands, key=lambda c: (-c.disc_score, c.indices))
    for r, c in enumerate(ranked, start=1):
        c.rank = r
    return ranked


def greedy_oracle_labels(
    doc: Document, kind: DiscriminatorKind, max_sents: int
) -> list[int]:
    """Binary per-sentence labels from greedy discriminator maximization.

    The first pick is always accepted (ties to the lower index); later
    picks must strictly improve the selected set's score.
    """
    if max_sents < 1:
        raise ColoError(f"greedy_oracle_labels: max_sents must be >= 1, got {max_sents}")
    n = len(doc.sentences)
    selected: list[int] = []
    best = 0.0
    while len(selected) < min(max_sents, n):
        cand_best, cand_score = None, None
        for i in range(n):
            if i in selected:
                continue
            trial = sorted(selected + [i])
            s = discriminator_score(candidate_tokens(doc, trial), doc.reference, kind)
            if cand_score is None or s > cand_score:
                cand_best, cand_score = i, s
        if not selected:
            selected.append(cand_best)
            best = cand_score
        elif cand_score > best:
            selected.append(cand_best)
            best = cand_score
        else:
            break
    labels = [0] * n
    for i in selected:
        labels[i] = 1
    return labels


def lead(doc: Document, k: int) -> Candidate:
    if k < 1:
        raise ColoError(f"lead: k must be >= 1, got {k}")
    return Candidate(indices=tuple(range(min(k, len(doc.sentences)))))


def oracle_candidate(
    cands: list[Candidate], doc: Document, kind: DiscriminatorKind
) -> Candidate:
    return rank_candidates(cands, doc, kind)[0]


def exhaustive_best_subset(
    doc: Document, kind: DiscriminatorKind, max_sents: int
) -> tuple[tuple[int, ...], float]:
    """Best subset of size 1..max_sents over the whole document.

    Exponential in max_sents; intended for small documents and as an
    independent check on greedy selection.
    """
    n = len(doc.sentences)
    best_idx: tuple[int, ...] = (0,)
    best_score = None
    for size in range(1, min(max_sents, n) + 1):
        for combo in combinations(range(n), size):
            s = discriminator_score(candidate_tokens(doc, combo), doc.reference, kind)
            if best_score is None or s > best_score or (s == best_score and combo < best_idx):
                best_idx, best_score = combo, s
    return best_idx, best_score


def infer_candidate_counts(docs: list[Document], kind: DiscriminatorKind, max_sents: int = 4):
    """Heuristic N: the two most frequent greedy-oracle selection sizes."""
    freq = Counter(sum(greedy_oracle_labels(d, kind, max_sents)) for d in docs)
    top = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:2]
    return tuple(sorted(n for n, _ in top if n >= 1)) or (1,)
