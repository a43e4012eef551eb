"""Losses and training loops for the extractive summarizer.

Two regimes share one driver and differ only in where candidates come from:
``online`` recomputes the clipped/enumerated pool from the current
parameters at every step, while ``naive`` freezes the pool once, right
after warmup, and reuses the cached sets for the rest of training.
"""

from __future__ import annotations

import csv
import random
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .candidates import (
    CandidateSpec,
    clip_topk,
    enumerate_candidates,
    greedy_oracle_labels,
    rank_candidates,
)
from .corpus import Dataset, Document, ModelInput, build_model_input
from .encoder import ExtractiveModel, candidate_embedding
from .errors import ColoError, ShapeError
from .metrics import DiscriminatorKind

BCE_EPS = 1e-7


@dataclass
class TrainConfig:
    margin: float = 0.01
    warmup_steps_bce: int = 200
    combined_steps: int = 1900
    batch_size: int = 4
    seed: int = 0
    kind: DiscriminatorKind = DiscriminatorKind.ROUGE12_MEAN
    rank_loss_normalize: bool = False
    margin_scaled_by_rank_gap: bool = False
    candidate_spec: CandidateSpec = field(default_factory=CandidateSpec)
    lr_warmup: int = 200
    lr_scale: float = 0.08
    label_max_sents: int | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ColoError(f"margin must be >= 0, got {self.margin}")
        if self.warmup_steps_bce < 0 or self.combined_steps < 0:
            raise ColoError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ColoError("batch_size must be >= 1")

    @property
    def max_label_sents(self) -> int:
        return self.label_max_sents or max(self.candidate_spec.nums)

    @property
    def total_steps(self) -> int:
        return self.warmup_steps_bce + self.combined_steps


@dataclass
class StepReport:
    step: int
    l_sum: float
    l_rank: float
    total: float
    n_cands: int
    ms: float


@dataclass
class RankLoss:
    loss: Tensor
    n_pairs: int

    @property
    def skipped(self) -> bool:
        return self.n_pairs == 0


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross entropy; probabilities clamped away from {0,1}."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != probs.shape:
        raise ShapeError(f"bce_loss: probs {probs.shape} vs labels {y.shape}")
    pc = np.clip(probs.data.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    val = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean()
    out = Tensor(np.asarray(val, dtype=probs.dtype))

    def bw(g):
        if probs.requires_grad:
            grad = (pc - y) / (pc * (1.0 - pc) * y.size)
            probs.accumulate_grad((float(g) * grad).astype(probs.dtype))

    ad.record(out, (probs,), bw)
    return out


def stack_rows(vectors: list[Tensor]) -> Tensor:
    rows = [ad.reshape(v, (1, v.shape[0])) for v in vectors]
    return rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)


def ranking_loss(
    z_X: Tensor,
    ranked_embs,
    margin: float,
    normalize: bool = True,
    scaled: bool = False,
) -> RankLoss:
    """Margin ranking loss over all better/worse pairs in rank order.

    ``ranked_embs`` is a (m, d) tensor or list of vectors with the rank-1
    candidate first.  Each pair (i earlier, j later) contributes
    max(0, cos(z_X, z_j) - cos(z_X, z_i) + margin'), with margin' scaled
    by the rank gap when ``scaled``.
    """
    embs = ranked_embs if isinstance(ranked_embs, Tensor) else stack_rows(ranked_embs)
    m = embs.shape[0]
    if m < 2:
        return RankLoss(Tensor(np.asarray(0.0, dtype=z_X.dtype)), 0)
    cos = ad.cosine_rows(embs, z_X)
    pairs = [(i, j) for j in range(m) for i in range(j)]
    npairs = len(pairs)
    A = np.zeros((npairs, m), dtype=z_X.dtype)
    margins = np.empty(npairs, dtype=z_X.dtype)
    for r, (i, j) in enumerate(pairs):
        A[r, j] = 1.0
        A[r, i] = -1.0
        margins[r] = margin * (j - i) if scaled else margin
    diffs = ad.reshape(ad.matmul(Tensor(A), ad.reshape(cos, (m, 1))), (npairs,))
    hinges = ad.hinge(ad.shift(diffs, margins))
    loss = ad.sum_all(hinges)
    if normalize:
        loss = ad.scale(loss, 1.0 / npairs)
    return RankLoss(loss, npairs)


def truncate_document(doc: Document, n_kept: int) -> Document:
    if n_kept >= len(doc.sentences):
        return doc
    return Document(
        id=doc.id,
        sentences=doc.sentences[:n_kept],
        reference=doc.reference,
        raw_sentences=doc.raw_sentences[:n_kept],
        raw_summary=doc.raw_summary,
    )


class LabelCache:
    """Greedy oracle labels keyed by (doc id, kept count); deterministic."""

    def __init__(self, kind: DiscriminatorKind, max_sents: int):
        self.kind = kind
        self.max_sents = max_sents
        self._cache: dict[tuple[str, int], list[int]] = {}

    def labels(self, doc: Document, n_kept: int) -> list[int]:
        key = (doc.id, n_kept)
        if key not in self._cache:
            view = truncate_document(doc, n_kept)
            self._cache[key] = greedy_oracle_labels(view, self.kind, self.max_sents)
        return self._cache[key]


def candidate_pool(probs: list[float], spec: CandidateSpec):
    """Clip on current probabilities, then enumerate: the online pool."""
    return enumerate_candidates(clip_topk(probs, spec.n_prime), spec)


@dataclass
class DocStepParts:
    l_sum: Tensor
    l_rank: Tensor | None
    n_cands: int
    degenerate: bool


def _doc_loss(
    model: ExtractiveModel,
    doc: Document,
    inp: ModelInput,
    cfg: TrainConfig,
    labels: LabelCache,
    include_rank: bool,
    cached_order: list[tuple[int, ...]] | None = None,
) -> DocStepParts:
    out = model.encode(inp)
    n_kept = len(inp.cls_pos)
    y = labels.labels(doc, n_kept)
    l_sum = bce_loss(out.sentence_probs, y)
    if not include_rank:
        return DocStepParts(l_sum, None, 0, False)
    if cached_order is None:
        pool = candidate_pool(out.probs_list(), cfg.candidate_spec)
        ranked = rank_candidates(pool, truncate_document(doc, n_kept), cfg.kind)
        order = [c.indices for c in ranked]
    else:
        order = cached_order
    if len(order) < 2:
        return DocStepParts(l_sum, None, len(order), True)
    embs = stack_rows([candidate_embedding(out, idx) for idx in order])
    rl = ranking_loss(
        out.z_X,
        embs,
        cfg.margin,
        normalize=cfg.rank_loss_normalize,
        scaled=cfg.margin_scaled_by_rank_gap,
    )
    return DocStepParts(l_sum, rl.loss, len(order), False)


def freeze_candidate_pools(
    model: ExtractiveModel, dataset: Dataset, cfg: TrainConfig
) -> dict[str, list[tuple[int, ...]]]:
    """Offline sampling: pools from the current snapshot, ranked and cached."""
    cache: dict[str, list[tuple[int, ...]]] = {}
    for doc in dataset.documents:
        inp = build_model_input(doc, dataset.vocab, model.cfg.max_len)
        out = model.encode(inp)
        pool = candidate_pool(out.probs_list(), cfg.candidate_spec)
        ranked = rank_candidates(pool, truncate_document(doc, len(inp.cls_pos)), cfg.kind)
        cache[doc.id] = [c.indices for c in ranked]
    return cache


def train_step_online(
    model: ExtractiveModel,
    doc: Document,
    cfg: TrainConfig,
    vocab,
    opt: ad.AdamState,
    step: int,
    labels: LabelCache | None = None,
) -> StepReport:
    """One optimizer step on one document with candidates sampled online."""
    labels = labels or LabelCache(cfg.kind, cfg.max_label_sents)
    t0 = time.perf_counter()
    inp = build_model_input(doc, vocab, model.cfg.max_len)
    include_rank = step > cfg.warmup_steps_bce
    with ad.Tape():
        parts = _doc_loss(model, doc, inp, cfg, labels, include_rank)
        loss = parts.l_sum if parts.l_rank is None else ad.add(parts.l_sum, parts.l_rank)
        ad.backward(loss)
    lr = ad.transformer_lr(model.cfg.d_model, step, cfg.lr_warmup) * cfg.lr_scale
    params = model.param_list()
    ad.adam_step(params, opt, lr)
    ad.zero_grads(params)
    l_sum = float(parts.l_sum.data)
    l_rank = 0.0 if parts.l_rank is None else float(parts.l_rank.data)
    return StepReport(
        step=step,
        l_sum=l_sum,
        l_rank=l_rank,
        total=l_sum + l_rank,
        n_cands=parts.n_cands,
        ms=(time.perf_counter() - t0) * 1e3,
    )


@dataclass
class TrainResult:
    model: ExtractiveModel
    reports: list[StepReport]
    cached_pools: dict[str, list[tuple[int, ...]]] | None = None


def train(
    model: ExtractiveModel,
    dataset: Dataset,
    cfg: TrainConfig,
    sampling: str = "online",
    checkpoint_path=None,
) -> TrainResult:
    """Run warmup (BCE only) then the combined phase (BCE + ranking).

    ``sampling='online'`` rebuilds candidate pools from current parameters
    every step; ``sampling='naive'`` caches pools from the post-warmup
    snapshot.  Batch order depends only on the config seed, so the two
    regimes see identical batches.
    """
    if sampling not in ("online", "naive"):
        raise ColoError(f"unknown sampling regime: {sampling!r}")
    if not dataset.documents:
        raise ColoError("train: empty dataset")
    rng = random.Random(cfg.seed)
    inputs = {
        doc.id: build_model_input(doc, dataset.vocab, model.cfg.max_len)
        for doc in dataset.documents
    }
    labels = LabelCache(cfg.kind, cfg.max_label_sents)
    opt = ad.AdamState(model.param_list())
    reports: list[StepReport] = []
    cache: dict[str, list[tuple[int, ...]]] | None = None
    queue: list[Document] = []

    def next_batch() -> list[Document]:
        nonlocal queue
        batch = []
        while len(batch) < cfg.batch_size:
            if not queue:
                queue = list(dataset.documents)
                rng.shuffle(queue)
            batch.append(queue.pop())
        return batch

    for step in range(1, cfg.total_steps + 1):
        include_rank = step > cfg.warmup_steps_bce
        if sampling == "naive" and include_rank and cache is None:
            cache = freeze_candidate_pools(model, dataset, cfg)
        t0 = time.perf_counter()
        batch = next_batch()
        with ad.Tape():
            sum_terms: list[Tensor] = []
            rank_terms: list[Tensor] = []
            n_cands = 0
            for doc in batch:
                cached_order = None
                if cache is not None and include_rank:
                    if doc.id not in cache:
                        raise ColoError(f"offline cache missing document {doc.id}")
                    cached_order = cache[doc.id]
                parts = _doc_loss(
                    model, doc, inputs[doc.id], cfg, labels, include_rank, cached_order
                )
                sum_terms.append(parts.l_sum)
                if parts.l_rank is not None:
                    rank_terms.append(parts.l_rank)
                n_cands += parts.n_cands
            l_sum = sum_terms[0]
            for t in sum_terms[1:]:
                l_sum = ad.add(l_sum, t)
            l_sum = ad.scale(l_sum, 1.0 / len(batch))
            if rank_terms:
                l_rank = rank_terms[0]
                for t in rank_terms[1:]:
                    l_rank = ad.add(l_rank, t)
                l_rank = ad.scale(l_rank, 1.0 / len(batch))
                loss = ad.add(l_sum, l_rank)
            else:
                l_rank = None
                loss = l_sum
            ad.backward(loss)
        lr = ad.transformer_lr(model.cfg.d_model, step, cfg.lr_warmup) * cfg.lr_scale
        params = model.param_list()
        ad.adam_step(params, opt, lr)
        ad.zero_grads(params)
        ls = float(l_sum.data)
        lrk = 0.0 if l_rank is None else float(l_rank.data)
        reports.append(
            StepReport(
                step=step,
                l_sum=ls,
                l_rank=lrk,
                total=ls + lrk,
                n_cands=n_cands,
                ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            model.save(checkpoint_path)
    if checkpoint_path:
        model.save(checkpoint_path)
    return TrainResult(model=model, reports=reports, cached_pools=cache)


def train_naive_offline(
    model: ExtractiveModel, dataset: Dataset, cfg: TrainConfig, checkpoint_path=None
) -> TrainResult:
    """Warmup, then multi-task tuning on pools frozen at the warmup snapshot."""
    return train(model, dataset, cfg, sampling="naive", checkpoint_path=checkpoint_path)


def write_step_reports(path, reports: list[StepReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "l_sum", "l_rank", "total", "n_cands", "ms"])
        for r in reports:
            w.writerow(
                [r.step, f"{r.l_sum:.6f}", f"{r.l_rank:.6f}", f"{r.total:.6f}", r.n_cands, f"{r.ms:.3f}"]
            )
