"""Candidate selection at inference time, corpus evaluation, and the
candidate-embedding export used for visualization.

Selection shares the candidate-pool construction with training (clip on
current classifier probabilities, then enumerate), so the inference-time
search space is exactly the training-time one for identical parameters.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .candidates import (
    Candidate,
    CandidateSpec,
    candidate_tokens,
    greedy_oracle_labels,
    lead,
    rank_candidates,
)
from .corpus import Dataset, Document, build_model_input
from .encoder import EncoderOutput, ExtractiveModel, candidate_embedding
from .errors import ColoError
from .metrics import DiscriminatorKind, js2_divergence, rouge_l, rouge_n
from .training import candidate_pool, truncate_document


class SystemKind(Enum):
    COLO_EXT = "colo"
    CLASSIFIER_TOPK = "topk"
    LEAD = "lead"
    ORACLE_SET = "oracle"
    TWO_STAGE = "twostage"


@dataclass
class EvalConfig:
    spec: CandidateSpec = field(default_factory=CandidateSpec)
    kind: DiscriminatorKind = DiscriminatorKind.ROUGE12_MEAN
    topk_k: int | None = None
    seed: int = 0


@dataclass
class EvalRow:
    system: str
    r1: float
    r2: float
    rl: float
    js2: float
    n_docs: int
    seed: int


def candidate_cosines(output: EncoderOutput, cands: list[Candidate]) -> list[float]:
    """Cosine of each candidate's mean-pooled embedding to the anchor.

    numpy only: selection needs no gradients, and skipping the tape keeps
    the ranking overhead per document small next to the encode itself.
    """
    h = output.h.data.astype(np.float64)
    z = output.z_X.data.astype(np.float64)
    nz = float(np.linalg.norm(z))
    out = []
    for c in cands:
        e = h[list(c.indices)].mean(axis=0)
        ne = float(np.linalg.norm(e))
        out.append(0.0 if nz == 0.0 or ne == 0.0 else float(z @ e) / (nz * ne))
    return out


def _argmax_candidate(cands: list[Candidate], scores: list[float]) -> Candidate:
    best = 0
    for i in range(1, len(cands)):
        if scores[i] > scores[best] or (
            scores[i] == scores[best] and cands[i].indices < cands[best].indices
        ):
            best = i
    return cands[best]


def select_from_output(output: EncoderOutput, spec: CandidateSpec) -> Candidate:
    """Highest cosine-to-anchor candidate; ties go to lower index tuples."""
    pool = candidate_pool(output.probs_list(), spec)
    if len(pool) == 1:
        return pool[0]
    return _argmax_candidate(pool, candidate_cosines(output, pool))


def select_colo(model: ExtractiveModel, doc: Document, spec: CandidateSpec, vocab) -> Candidate:
    inp = build_model_input(doc, vocab, model.cfg.max_len)
    return select_from_output(model.encode(inp), spec)


def select_topk(model: ExtractiveModel, doc: Document, k: int, vocab) -> Candidate:
    if k < 1:
        raise ColoError(f"select_topk: k must be >= 1, got {k}")
    inp = build_model_input(doc, vocab, model.cfg.max_len)
    probs = model.encode(inp).probs_list()
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return Candidate(indices=tuple(sorted(order[: min(k, len(probs))])))


def default_topk_k(dataset: Dataset, kind: DiscriminatorKind, max_sents: int = 4,
                   sample: int = 200, seed: int = 0) -> int:
    """Round the mean greedy-oracle selection size over a document sample."""
    docs = dataset.documents
    if len(docs) > sample:
        docs = random.Random(seed).sample(docs, sample)
    counts = [sum(greedy_oracle_labels(d, kind, max_sents)) for d in docs]
    return max(1, round(sum(counts) / len(counts)))


def _metric_tuple(cand_toks, ref) -> tuple[float, float, float, float]:
    return (
        rouge_n(cand_toks, ref, 1).f1,
        rouge_n(cand_toks, ref, 2).f1,
        rouge_l(cand_toks, ref).f1,
        js2_divergence(cand_toks, ref),
    )


def evaluate(
    dataset: Dataset,
    systems: list[SystemKind],
    model: ExtractiveModel,
    cfg: EvalConfig,
    two_stage_fn=None,
) -> list[EvalRow]:
    """Per-system corpus means of R-1/R-2/R-L/JS-2 for selected candidates."""
    if not systems:
        raise ColoError("evaluate: no systems requested")
    if SystemKind.TWO_STAGE in systems and two_stage_fn is None:
        raise ColoError("evaluate: TwoStage requested without a reranker")
    k = cfg.topk_k or default_topk_k(dataset, cfg.kind, seed=cfg.seed)
    per_system: dict[SystemKind, list[tuple[float, float, float, float]]] = {
        s: [] for s in systems
    }
    for doc in dataset.documents:
        inp = build_model_input(doc, dataset.vocab, model.cfg.max_len)
        out = model.encode(inp)
        view = truncate_document(doc, len(inp.cls_pos))
        pool = candidate_pool(out.probs_list(), cfg.spec)
        for s in systems:
            if s is SystemKind.COLO_EXT:
                cand = (
                    pool[0]
                    if len(pool) == 1
                    else _argmax_candidate(pool, candidate_cosines(out, pool))
                )
            elif s is SystemKind.CLASSIFIER_TOPK:
                probs = out.probs_list()
                order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
                cand = Candidate(indices=tuple(sorted(order[: min(k, len(probs))])))
            elif s is SystemKind.LEAD:
                cand = lead(view, k)
            elif s is SystemKind.ORACLE_SET:
                cand = rank_candidates([Candidate(indices=c.indices) for c in pool], view, cfg.kind)[0]
            elif s is SystemKind.TWO_STAGE:
                cand = two_stage_fn(doc)
            else:  # pragma: no cover
                raise ColoError(f"unknown system {s}")
            per_system[s].append(
                _metric_tuple(candidate_tokens(view, cand.indices), doc.reference)
            )
    rows = []
    n = len(dataset.documents)
    for s in systems:
        vals = per_system[s]
        means = [math.fsum(v[i] for v in vals) / n for i in range(4)]
        rows.append(EvalRow(s.value, means[0], means[1], means[2], means[3], n, cfg.seed))
    return rows


# ---------------------------------------------------------------------------
# candidate-embedding export


@dataclass
class VizRow:
    doc_id: str
    indices: tuple[int, ...]
    group: str
    x: float
    y: float
    cos: float


def pca_2d(points: np.ndarray) -> np.ndarray:
    """Deterministic 2-component PCA with a fixed sign convention."""
    X = points.astype(np.float64) - points.mean(axis=0, dtype=np.float64)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    comps = vt[:2].copy()
    for c in comps:
        j = int(np.argmax(np.abs(c)))
        if c[j] < 0:
            c *= -1.0
    return X @ comps.T


def export_candidate_embeddings(
    model: ExtractiveModel,
    doc: Document,
    spec: CandidateSpec,
    kind: DiscriminatorKind,
    vocab,
) -> list[VizRow]:
    """Anchor plus candidates projected to 2-D, grouped by rank terciles."""
    inp = build_model_input(doc, vocab, model.cfg.max_len)
    out = model.encode(inp)
    pool = candidate_pool(out.probs_list(), spec)
    if len(pool) < 3:
        raise ColoError(f"document {doc.id}: too few points ({len(pool)} candidates)")
    view = truncate_document(doc, len(inp.cls_pos))
    ranked = rank_candidates(pool, view, kind)
    cosines = candidate_cosines(out, ranked)
    pts = np.stack(
        [out.z_X.data.astype(np.float64)]
        + [candidate_embedding(out, c.indices).data.astype(np.float64) for c in ranked]
    )
    coords = pca_2d(pts)
    m = len(ranked)
    names = ("top", "mid", "bottom")
    rows = [VizRow(doc.id, (), "anchor", float(coords[0, 0]), float(coords[0, 1]), 1.0)]
    for i, c in enumerate(ranked):
        group = names[(c.rank - 1) * 3 // m]
        rows.append(
            VizRow(doc.id, c.indices, group, float(coords[i + 1, 0]), float(coords[i + 1, 1]), cosines[i])
        )
    return rows


def tercile_separation(rows: list[VizRow]) -> float:
    """Mean cosine-to-anchor gap between the top and bottom rank terciles."""
    top = [r.cos for r in rows if r.group == "top"]
    bottom = [r.cos for r in rows if r.group == "bottom"]
    if not top or not bottom:
        raise ColoError("tercile_separation: missing tercile groups")
    return sum(top) / len(top) - sum(bottom) / len(bottom)


def tercile_check(
    model: ExtractiveModel,
    dataset: Dataset,
    spec: CandidateSpec,
    kind: DiscriminatorKind,
    n_docs: int = 100,
    seed: int = 0,
) -> float:
    """Fraction of sampled docs whose top tercile sits closer to the anchor."""
    docs = dataset.documents
    if len(docs) > n_docs:
        docs = random.Random(seed).sample(docs, n_docs)
    wins = 0
    used = 0
    for doc in docs:
        try:
            rows = export_candidate_embeddings(model, doc, spec, kind, dataset.vocab)
        except ColoError:
            continue
        used += 1
        if tercile_separation(rows) > 0.0:
            wins += 1
    if used == 0:
        raise ColoError("tercile_check: no usable documents")
    return wins / used


# ---------------------------------------------------------------------------
# report writers


def write_eval_csv(path, rows: list[EvalRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["system", "r1", "r2", "rl", "js2", "n_docs", "seed"])
        for r in rows:
            w.writerow(
                [r.system, f"{r.r1:.6f}", f"{r.r2:.6f}", f"{r.rl:.6f}", f"{r.js2:.6f}", r.n_docs, r.seed]
            )


def write_viz_csv(path, rows: list[VizRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["doc_id", "cand_indices", "group", "x", "y", "cos"])
        for r in rows:
            w.writerow(
                [
                    r.doc_id,
                    " ".join(str(i) for i in r.indices),
                    r.group,
                    f"{r.x:.6f}",
                    f"{r.y:.6f}",
                    f"{r.cos:.6f}",
                ]
            )


_SVG_COLORS = {"anchor": "#d62728", "top": "#2ca02c", "mid": "#ff7f0e", "bottom": "#1f77b4"}


def write_viz_svg(path, rows: list[VizRow], size: int = 480) -> None:
    """Self-contained scatter of the projected embeddings."""
    xs = [r.x for r in rows]
    ys = [r.y for r in rows]
    span = max(max(xs) - min(xs), max(ys) - min(ys)) or 1.0
    pad = 24

    def sx(v):
        return pad + (v - min(xs)) / span * (size - 2 * pad)

    def sy(v):
        return size - pad - (v - min(ys)) / span * (size - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for r in rows:
        radius = 7 if r.group == "anchor" else 4
        parts.append(
            f'<circle cx="{sx(r.x):.2f}" cy="{sy(r.y):.2f}" r="{radius}" '
            f'fill="{_SVG_COLORS[r.group]}" fill-opacity="0.8">'
            f"<title>{r.group} {' '.join(map(str, r.indices))}</title></circle>"
        )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))
