"""Simulated summarize-then-rerank baseline and the throughput benchmark.

The two-stage baseline re-encodes every candidate (plus the document) with
a separately parameterized reranker encoder, so its per-document cost grows
with the candidate count; the one-stage path reuses its single encode.
Token accounting counts content tokens only (sentence tokens, no markers)
and is exact; timing rows are medians over repetitions.
"""

from __future__ import annotations

import csv
import math
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .candidates import Candidate, CandidateSpec, candidate_tokens, rank_candidates
from .corpus import DOC, Dataset, Document, build_model_input
from .encoder import EncoderConfig, ExtractiveModel, candidate_embedding, encoder_forward
from .errors import ColoError
from .inference import candidate_cosines, _argmax_candidate
from .metrics import DiscriminatorKind
from .training import (
    TrainConfig,
    candidate_pool,
    freeze_candidate_pools,
    ranking_loss,
    stack_rows,
    train,
    truncate_document,
)

CAND_LEN_CAP = 300


def worker_count() -> int:
    """Thread cap for sharded benchmark modes, from COLO_THREADS."""
    env = os.environ.get("COLO_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError as e:
            raise ColoError(f"COLO_THREADS must be an integer, got {env!r}") from e
        if n < 1:
            raise ColoError("COLO_THREADS must be >= 1")
        return n
    return min(4, os.cpu_count() or 1)


@dataclass
class BenchConfig:
    sizes: tuple[int, ...] = (4, 8, 16, 20, 32)
    batch_mode: str = "one"
    repetitions: int = 3
    warmup_batches: int = 1
    cand_len_cap: int = CAND_LEN_CAP
    byte_budget: int = 64 * 1024 * 1024
    n_docs: int = 32

    def __post_init__(self):
        if any(s < 2 for s in self.sizes):
            raise ColoError("bench sizes must be >= 2")
        if self.repetitions < 1:
            raise ColoError("repetitions must be >= 1")
        if self.batch_mode not in ("one", "max"):
            raise ColoError(f"batch_mode must be one|max, got {self.batch_mode!r}")


@dataclass
class BenchRow:
    system: str
    c: int
    samples_per_s: float
    tokens_per_doc: float
    peak_bytes: int
    batch_mode: str


def doc_content_tokens(doc: Document) -> int:
    return sum(len(s) for s in doc.sentences)


def two_stage_token_count(doc: Document, pool: list[Candidate], cap: int) -> int:
    """Reranker input tokens: capped candidate lengths plus the document."""
    total = doc_content_tokens(doc)
    for c in pool:
        total += min(len(candidate_tokens(doc, c.indices)), cap)
    return total


def reranker_vector(reranker: ExtractiveModel, tokens: list[int], cap: int) -> np.ndarray:
    """Encode ``<doc> tokens`` (capped) and read the position-0 state."""
    reranker.encode_calls += 1
    ids = [DOC] + tokens[: min(cap, reranker.cfg.max_len - 1)]
    hidden = encoder_forward(reranker.params, reranker.cfg, ids, prefix="enc")
    return hidden.data[0]


def rerank_two_stage(
    generator: ExtractiveModel,
    reranker: ExtractiveModel,
    doc: Document,
    spec: CandidateSpec,
    vocab,
    cap: int = CAND_LEN_CAP,
) -> Candidate:
    """Generate the pool, then re-encode every candidate plus the document."""
    inp = build_model_input(doc, vocab, generator.cfg.max_len)
    out = generator.encode(inp)
    view = truncate_document(doc, len(inp.cls_pos))
    pool = candidate_pool(out.probs_list(), spec)
    z_doc = reranker_vector(reranker, [t for s in view.sentences for t in s], cap)
    nd = float(np.linalg.norm(z_doc))
    best, best_cos = None, None
    for c in pool:
        z_c = reranker_vector(reranker, candidate_tokens(view, c.indices), cap)
        nc = float(np.linalg.norm(z_c))
        cos = 0.0 if nd == 0.0 or nc == 0.0 else float(z_doc @ z_c) / (nd * nc)
        if best is None or cos > best_cos or (cos == best_cos and c.indices < best.indices):
            best, best_cos = c, cos
    return best


def activation_bytes(cfg: EncoderConfig, seq_len: int) -> int:
    """Live-tensor byte proxy for one encoder forward pass.

    Counts the float32 activations a forward pass keeps around: per layer,
    the residual stream copies plus per-head attention matrices and the FFN
    expansion.  A proxy for comparing configurations, not an allocator
    measurement.
    """
    T, d = seq_len, cfg.d_model
    per_layer = 4 * T * d + cfg.n_heads * (T * T + 3 * T * (d // cfg.n_heads)) + 2 * T * cfg.ffn_dim
    return 4 * (2 * T * d + cfg.n_layers * per_layer)


def _one_stage_select(model, doc, spec, vocab, rank: bool = True):
    inp = build_model_input(doc, vocab, model.cfg.max_len)
    out = model.encode(inp)
    pool = candidate_pool(out.probs_list(), spec)
    if not rank or len(pool) == 1:
        return pool[0]
    return _argmax_candidate(pool, candidate_cosines(out, pool))


def _timed(fn, docs, reps: int, warmup: int, threads: int) -> float:
    """Median samples/s over ``reps`` timed passes, warmup passes excluded."""
    rates = []
    for r in range(warmup + reps):
        t0 = time.perf_counter()
        if threads <= 1:
            for doc in docs:
                fn(doc)
        else:
            with ThreadPoolExecutor(max_workers=threads) as tp:
                list(tp.map(fn, docs))
        dt = time.perf_counter() - t0
        if r >= warmup:
            rates.append(len(docs) / dt)
    return statistics.median(rates)


def _spec_for_size(c: int, docs: list[Document]) -> CandidateSpec:
    """Realize an exact candidate count: |C| singletons from n_prime = |C|."""
    min_sents = min(len(d.sentences) for d in docs)
    if c > min_sents:
        raise ColoError(
            f"bench size {c} needs documents with >= {c} sentences (corpus has {min_sents})"
        )
    return CandidateSpec(nums=(1,), n_prime=c)


def benchmark(
    dataset: Dataset,
    one_stage: ExtractiveModel,
    reranker: ExtractiveModel,
    cfg: BenchConfig,
    systems: tuple[str, ...] = ("one_stage", "no_rank", "two_stage"),
) -> list[BenchRow]:
    docs = dataset.documents[: cfg.n_docs]
    if not docs:
        raise ColoError("benchmark: empty dataset")
    vocab = dataset.vocab
    threads = worker_count() if cfg.batch_mode == "max" else 1
    if cfg.batch_mode == "max":
        # keep concurrent live activations under the byte budget
        longest = max(
            len(build_model_input(d, vocab, one_stage.cfg.max_len).token_ids) for d in docs
        )
        per_doc = activation_bytes(one_stage.cfg, longest)
        threads = max(1, min(threads, cfg.byte_budget // max(per_doc, 1)))
    rows = []
    mean_doc_tokens = sum(doc_content_tokens(d) for d in docs) / len(docs)
    for c in cfg.sizes:
        spec = _spec_for_size(c, docs)
        pools = {}
        for d in docs:
            inp = build_model_input(d, vocab, one_stage.cfg.max_len)
            out = one_stage.encode(inp)
            pools[d.id] = candidate_pool(out.probs_list(), spec)
        for system in systems:
            if system == "one_stage":
                fn = lambda d: _one_stage_select(one_stage, d, spec, vocab, rank=True)
                tokens = mean_doc_tokens
                peak = activation_bytes(one_stage.cfg, one_stage.cfg.max_len) * max(threads, 1)
            elif system == "no_rank":
                fn = lambda d: _one_stage_select(one_stage, d, spec, vocab, rank=False)
                tokens = mean_doc_tokens
                peak = activation_bytes(one_stage.cfg, one_stage.cfg.max_len) * max(threads, 1)
            elif system == "two_stage":
                fn = lambda d: rerank_two_stage(
                    one_stage, reranker, d, spec, vocab, cfg.cand_len_cap
                )
                tokens = sum(
                    two_stage_token_count(d, pools[d.id], cfg.cand_len_cap) for d in docs
                ) / len(docs)
                peak = activation_bytes(reranker.cfg, reranker.cfg.max_len) * (c + 1)
            else:
                raise ColoError(f"unknown bench system {system!r}")
            rate = _timed(fn, docs, cfg.repetitions, cfg.warmup_batches, threads)
            rows.append(BenchRow(system, c, rate, tokens, peak, cfg.batch_mode))
    return rows


@dataclass
class CostRow:
    pipeline: str
    stage: str
    seconds: float


def training_cost_report(
    dataset: Dataset,
    encoder_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    stage2_steps: int | None = None,
    seed: int = 0,
) -> list[CostRow]:
    """Wall-clock cost of the one-stage run vs the three two-stage stages."""
    rows = []
    t0 = time.perf_counter()
    colo = ExtractiveModel(encoder_cfg, seed=seed)
    train(colo, dataset, train_cfg)
    rows.append(CostRow("one_stage", "combined_training", time.perf_counter() - t0))

    t0 = time.perf_counter()
    gen = ExtractiveModel(encoder_cfg, seed=seed)
    gen_cfg = TrainConfig(
        margin=train_cfg.margin,
        warmup_steps_bce=train_cfg.total_steps,
        combined_steps=0,
        batch_size=train_cfg.batch_size,
        seed=train_cfg.seed,
        kind=train_cfg.kind,
        candidate_spec=train_cfg.candidate_spec,
        lr_warmup=train_cfg.lr_warmup,
        lr_scale=train_cfg.lr_scale,
    )
    train(gen, dataset, gen_cfg)
    rows.append(CostRow("two_stage", "generator_training", time.perf_counter() - t0))

    t0 = time.perf_counter()
    pools = freeze_candidate_pools(gen, dataset, train_cfg)
    rows.append(CostRow("two_stage", "offline_preprocessing", time.perf_counter() - t0))

    t0 = time.perf_counter()
    reranker = ExtractiveModel(encoder_cfg, seed=seed + 1)
    train_reranker(
        reranker,
        dataset,
        pools,
        steps=stage2_steps if stage2_steps is not None else max(1, train_cfg.combined_steps // 2),
        cfg=train_cfg,
    )
    rows.append(CostRow("two_stage", "reranker_training", time.perf_counter() - t0))
    return rows


def train_reranker(
    reranker: ExtractiveModel,
    dataset: Dataset,
    pools: dict[str, list[tuple[int, ...]]],
    steps: int,
    cfg: TrainConfig,
    cap: int = CAND_LEN_CAP,
) -> None:
    """Fit the reranker on cached candidate orders with the ranking loss."""
    import random as _random

    rng = _random.Random(cfg.seed)
    opt = ad.AdamState(reranker.param_list())
    docs = list(dataset.documents)
    d = reranker.cfg.d_model
    for step in range(1, steps + 1):
        doc = docs[rng.randrange(len(docs))]
        if doc.id not in pools:
            raise ColoError(f"reranker training: no cached pool for {doc.id}")
        order = pools[doc.id]
        if len(order) < 2:
            continue
        with ad.Tape():
            flat = [t for s in doc.sentences for t in s]
            ids = [DOC] + flat[: min(cap, reranker.cfg.max_len - 1)]
            hid = encoder_forward(reranker.params, reranker.cfg, ids, prefix="enc")
            z_doc = ad.reshape(ad.embedding_gather(hid, [0]), (d,))
            zs = []
            for idx in order:
                ctoks = candidate_tokens(doc, idx)
                cids = [DOC] + ctoks[: min(cap, reranker.cfg.max_len - 1)]
                chid = encoder_forward(reranker.params, reranker.cfg, cids, prefix="enc")
                zs.append(ad.reshape(ad.embedding_gather(chid, [0]), (d,)))
            rl = ranking_loss(z_doc, stack_rows(zs), cfg.margin, normalize=cfg.rank_loss_normalize)
            if rl.skipped:
                continue
            ad.backward(rl.loss)
        lr = ad.transformer_lr(reranker.cfg.d_model, step, cfg.lr_warmup) * cfg.lr_scale
        params = reranker.param_list()
        ad.adam_step(params, opt, lr)
        ad.zero_grads(params)


def write_bench_csv(path, rows: list[BenchRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["system", "c", "samples_per_s", "tokens_per_doc", "peak_bytes", "batch_mode"])
        for r in rows:
            w.writerow(
                [r.system, r.c, f"{r.samples_per_s:.3f}", f"{r.tokens_per_doc:.1f}", r.peak_bytes, r.batch_mode]
            )


def write_cost_csv(path, rows: list[CostRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pipeline", "stage", "seconds"])
        for r in rows:
            w.writerow([r.pipeline, r.stage, f"{r.seconds:.3f}"])
