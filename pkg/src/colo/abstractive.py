"""Toy encoder-decoder branch: NLL training, diverse beam search, and
cosine-based beam selection.

Representation conventions mirror the extractive path: the document vector
z_X is the encoder hidden state at position 0, and each decoded candidate's
vector z_C is the decoder hidden state at the position that emitted its
final token (index len(tokens) - 1 when the input starts at <bos>).
"""

from __future__ import annotations

import math
import random
import time
from collections import Counter
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import BOS, EOS, Dataset, Document, ModelInput, build_model_input
from .encoder import (
    EncoderConfig,
    _ffn,
    _init_matrix,
    _self_attention,
    encoder_forward,
    init_encoder_params,
    rel_index_matrix,
)
from .errors import ColoError, ShapeError
from .metrics import DiscriminatorKind, discriminator_score
from .training import RankLoss, StepReport, ranking_loss, stack_rows

NEG_INF = -1e9


@dataclass
class Seq2SeqConfig:
    encoder: EncoderConfig = None
    dec_layers: int = 1
    dec_heads: int = 4
    max_decode_len: int = 12
    beam_size: int = 8
    num_groups: int = 8
    diversity_penalty: float = 1.0

    def __post_init__(self):
        if self.encoder is None:
            raise ColoError("Seq2SeqConfig requires an encoder config")
        if self.beam_size < 1:
            raise ColoError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.num_groups < 1 or self.beam_size % self.num_groups != 0:
            raise ColoError(
                f"num_groups={self.num_groups} must divide beam_size={self.beam_size}"
            )
        if self.diversity_penalty < 0:
            raise ColoError("diversity_penalty must be >= 0")
        if self.encoder.d_model % self.dec_heads != 0:
            raise ColoError("d_model not divisible by dec_heads")


def _cross_attention(p, base: str, x: Tensor, memory: Tensor, n_heads: int):
    dh = x.shape[1] // n_heads
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(n_heads):
        q = ad.matmul(x, p[f"{base}.ch{h}.wq"])
        k = ad.matmul(memory, p[f"{base}.ch{h}.wk"])
        v = ad.matmul(memory, p[f"{base}.ch{h}.wv"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), scale)
        attn = ad.softmax(scores, axis=-1)
        heads.append(ad.matmul(attn, v))
    ctx = heads[0] if n_heads == 1 else ad.concat(heads, axis=1)
    return ad.add(ad.matmul(ctx, p[f"{base}.co"]), p[f"{base}.cbo"])


class Seq2SeqModel:
    """Encoder-decoder with flat named parameters; one doc at a time."""

    def __init__(self, cfg: Seq2SeqConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        enc = cfg.encoder
        d = enc.d_model
        self.params = init_encoder_params(enc, rng, dtype=dtype, prefix="enc")
        p = self.params
        p["dec.tok_emb"] = _init_matrix(rng, (enc.vocab_size, d), dtype)
        p["dec.pos_emb"] = _init_matrix(rng, (cfg.max_decode_len + 1, d), dtype)
        dh = d // cfg.dec_heads
        for i in range(cfg.dec_layers):
            base = f"dec.layer{i}"
            for name in ("ln1", "lnc", "ln2"):
                p[f"{base}.{name}.g"] = Tensor(np.ones(d), requires_grad=True, dtype=dtype)
                p[f"{base}.{name}.b"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
            for h in range(cfg.dec_heads):
                for name in ("wq", "wk", "wv"):
                    p[f"{base}.h{h}.{name}"] = _init_matrix(rng, (d, dh), dtype)
                    p[f"{base}.ch{h}.{name}"] = _init_matrix(rng, (d, dh), dtype)
                p[f"{base}.h{h}.rel"] = Tensor(
                    np.zeros((2 * enc.max_rel + 1, 1)), requires_grad=True, dtype=dtype
                )
            p[f"{base}.wo"] = _init_matrix(rng, (d, d), dtype)
            p[f"{base}.bo"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
            p[f"{base}.co"] = _init_matrix(rng, (d, d), dtype)
            p[f"{base}.cbo"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
            p[f"{base}.w1"] = _init_matrix(rng, (d, enc.ffn_dim), dtype)
            p[f"{base}.b1"] = Tensor(np.zeros(enc.ffn_dim), requires_grad=True, dtype=dtype)
            p[f"{base}.w2"] = _init_matrix(rng, (enc.ffn_dim, d), dtype)
            p[f"{base}.b2"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
        p["dec.lnf.g"] = Tensor(np.ones(d), requires_grad=True, dtype=dtype)
        p["dec.lnf.b"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
        p["out.w"] = _init_matrix(rng, (d, enc.vocab_size), dtype)
        p["out.b"] = Tensor(np.zeros(enc.vocab_size), requires_grad=True, dtype=dtype)
        self.encode_calls = 0

    def param_items(self):
        return sorted(self.params.items())

    def param_list(self):
        return [t for _, t in self.param_items()]

    def encode(self, inp: ModelInput) -> Tensor:
        """Encoder memory (T, d); position 0 is the document slot."""
        self.encode_calls += 1
        return encoder_forward(self.params, self.cfg.encoder, inp.token_ids, prefix="enc")

    def decode_hidden(self, memory: Tensor, tokens_in: list[int]) -> Tensor:
        """Final decoder hidden states for input ``tokens_in`` (causal)."""
        L = len(tokens_in)
        if L == 0:
            raise ShapeError("decode_hidden: empty decoder input")
        if L > self.cfg.max_decode_len + 1:
            raise ShapeError(f"decode_hidden: input length {L} exceeds max_decode_len")
        p = self.params
        enc = self.cfg.encoder
        x = ad.embedding_gather(p["dec.tok_emb"], tokens_in)
        pos = ad.embedding_gather(p["dec.pos_emb"], list(range(L)))
        x = ad.add(x, pos)
        causal = np.triu(np.full((L, L), NEG_INF), k=1)
        rel_idx = rel_index_matrix(L, enc.max_rel)
        for i in range(self.cfg.dec_layers):
            base = f"dec.layer{i}"
            a = _self_attention(
                p, base, ad.layer_norm(x, p[f"{base}.ln1.g"], p[f"{base}.ln1.b"]),
                self.cfg.dec_heads, causal, rel_idx,
            )
            x = ad.add(x, a)
            c = _cross_attention(
                p, base, ad.layer_norm(x, p[f"{base}.lnc.g"], p[f"{base}.lnc.b"]),
                memory, self.cfg.dec_heads,
            )
            x = ad.add(x, c)
            f = _ffn(p, base, ad.layer_norm(x, p[f"{base}.ln2.g"], p[f"{base}.ln2.b"]))
            x = ad.add(x, f)
        return ad.layer_norm(x, p["dec.lnf.g"], p["dec.lnf.b"])

    def logits(self, hidden: Tensor) -> Tensor:
        return ad.add(ad.matmul(hidden, self.params["out.w"]), self.params["out.b"])

    def step_fn(self, memory: Tensor):
        """Closure for search: prefix -> (next-token logprobs, last hidden)."""

        def step(prefix: tuple[int, ...]):
            hidden = self.decode_hidden(memory, [BOS] + list(prefix))
            logits = self.logits(hidden)
            lp = ad.log_softmax(logits, axis=-1)
            return lp.data[-1].astype(np.float64), hidden.data[-1].copy()

        return step

    def save(self, path) -> None:
        meta = {"kind": "seq2seq", **asdict(self.cfg.encoder)}
        for k in ("dec_layers", "dec_heads", "max_decode_len", "beam_size",
                  "num_groups", "diversity_penalty"):
            meta[k] = getattr(self.cfg, k)
        ad.save_arrays(path, [(n, t.data) for n, t in self.param_items()], meta=meta)

    @classmethod
    def load(cls, path) -> "Seq2SeqModel":
        arrays, meta = ad.load_arrays(path)
        if meta.get("kind") != "seq2seq":
            raise ColoError(f"checkpoint kind {meta.get('kind')!r} is not seq2seq")
        enc = EncoderConfig(
            **{k: meta[k] for k in (
                "vocab_size", "d_model", "n_layers", "n_heads",
                "ffn_dim", "max_len", "dropout", "use_positions", "max_rel",
            )}
        )
        cfg = Seq2SeqConfig(
            encoder=enc,
            **{k: meta[k] for k in (
                "dec_layers", "dec_heads", "max_decode_len", "beam_size",
                "num_groups", "diversity_penalty",
            )},
        )
        model = cls(cfg, seed=0)
        for name, t in model.param_items():
            if name not in arrays:
                raise ColoError(f"checkpoint missing tensor {name}")
            t.data = arrays[name].astype(model.dtype)
        return model


def nll_loss(model: Seq2SeqModel, inp: ModelInput, reference: list[int]) -> Tensor:
    """Mean token-level negative log likelihood with teacher forcing."""
    if not reference:
        raise ColoError("nll_loss: empty reference")
    ref = list(reference)[: model.cfg.max_decode_len - 1]
    memory = model.encode(inp)
    hidden = model.decode_hidden(memory, [BOS] + ref)
    logp = ad.log_softmax(model.logits(hidden), axis=-1)
    targets = ref + [EOS]
    picked = ad.take_per_row(logp, targets)
    return ad.scale(ad.mean_all(picked), -1.0)


@dataclass
class DecodedCandidate:
    tokens: tuple[int, ...]
    logprob: float
    group: int
    z_C: np.ndarray

    def text_tokens(self) -> list[int]:
        """Tokens scored by the discriminator: the sequence without <eos>."""
        return [t for t in self.tokens if t != EOS]


@dataclass
class _Beam:
    tokens: tuple[int, ...]
    logprob: float
    score: float
    finished: bool
    hidden: np.ndarray | None


def diverse_beam_search(step_fn, cfg: Seq2SeqConfig) -> list[DecodedCandidate]:
    """Group-sequential diverse decoding.

    Groups decode in order at every time step; a group's token logprobs are
    penalized by diversity_penalty times the count of that token among the
    tokens already chosen at this step by earlier groups.  Penalties affect
    the search score only; reported logprobs are the model's.
    """
    G = cfg.num_groups
    width = cfg.beam_size // G
    groups: list[list[_Beam]] = [
        [_Beam((), 0.0, 0.0, False, None)] for _ in range(G)
    ]
    for _t in range(cfg.max_decode_len):
        step_tokens: Counter = Counter()
        for g in range(G):
            beams = groups[g]
            if all(b.finished for b in beams):
                continue
            expansions: list[tuple[float, tuple, int, _Beam]] = []
            for order, beam in enumerate(beams):
                if beam.finished:
                    expansions.append((beam.score, beam.tokens, -1, beam))
                    continue
                logprobs, hidden = step_fn(beam.tokens)
                penalized = logprobs.copy()
                if cfg.diversity_penalty > 0.0 and step_tokens:
                    for tok, cnt in step_tokens.items():
                        penalized[tok] -= cfg.diversity_penalty * cnt
                top = np.argsort(-penalized, kind="stable")[: width + 1]
                for tok in top:
                    tok = int(tok)
                    expansions.append(
                        (
                            beam.score + float(penalized[tok]),
                            beam.tokens + (tok,),
                            tok,
                            _Beam(
                                beam.tokens + (tok,),
                                beam.logprob + float(logprobs[tok]),
                                beam.score + float(penalized[tok]),
                                tok == EOS or len(beam.tokens) + 1 >= cfg.max_decode_len,
                                hidden,
                            ),
                        )
                    )
            expansions.sort(key=lambda e: (-e[0], e[1]))
            new_beams = []
            seen: set[tuple] = set()
            for score, toks, tok, beam in expansions:
                if toks in seen:
                    continue
                seen.add(toks)
                new_beams.append(beam)
                if tok >= 0:
                    step_tokens[tok] += 1
                if len(new_beams) == width:
                    break
            groups[g] = new_beams
        if all(b.finished for grp in groups for b in grp):
            break
    out = []
    for g, beams in enumerate(groups):
        for b in beams:
            if not b.tokens:
                continue
            out.append(
                DecodedCandidate(tokens=b.tokens, logprob=b.logprob, group=g, z_C=b.hidden)
            )
    out.sort(key=lambda c: (-c.logprob, c.tokens))
    deduped = []
    seen_tok: set[tuple] = set()
    for c in out:
        if c.tokens in seen_tok:
            continue
        seen_tok.add(c.tokens)
        deduped.append(c)
    return deduped


def extract_representations(
    model: Seq2SeqModel, inp: ModelInput, tokens
) -> tuple[Tensor, Tensor]:
    """(z_X, z_C): encoder state at position 0 and decoder state at |C|-1."""
    toks = list(tokens)
    if not toks:
        raise ColoError("extract_representations: empty candidate")
    d = model.cfg.encoder.d_model
    memory = model.encode(inp)
    z_X = ad.reshape(ad.embedding_gather(memory, [0]), (d,))
    hidden = model.decode_hidden(memory, [BOS] + toks[:-1])
    z_C = ad.reshape(ad.embedding_gather(hidden, [hidden.shape[0] - 1]), (d,))
    return z_X, z_C


@dataclass
class AbsTrainConfig:
    margin: float = 0.01
    warmup_steps_nll: int = 300
    combined_steps: int = 800
    batch_size: int = 4
    seed: int = 0
    kind: DiscriminatorKind = DiscriminatorKind.ROUGE12_MEAN
    rank_loss_normalize: bool = False
    lr_warmup: int = 100
    lr_scale: float = 0.1

    @property
    def total_steps(self) -> int:
        return self.warmup_steps_nll + self.combined_steps


def rank_decoded(cands: list[DecodedCandidate], doc: Document, kind: DiscriminatorKind):
    """Best-first by discriminator; ties to higher logprob then tokens."""
    scored = [
        (discriminator_score(c.text_tokens(), doc.reference, kind), c) for c in cands
    ]
    scored.sort(key=lambda sc: (-sc[0], -sc[1].logprob, sc[1].tokens))
    return [c for _, c in scored]


def train_step_abs_online(
    model: Seq2SeqModel,
    doc: Document,
    inp: ModelInput,
    cfg: AbsTrainConfig,
    opt: ad.AdamState,
    step: int,
) -> StepReport:
    """One step: NLL plus, after warmup, the ranking loss over fresh beams."""
    t0 = time.perf_counter()
    include_rank = step > cfg.warmup_steps_nll
    ranked: list[DecodedCandidate] = []
    if include_rank:
        memory = model.encode(inp)
        ranked = rank_decoded(
            diverse_beam_search(model.step_fn(memory), model.cfg), doc, cfg.kind
        )
    with ad.Tape():
        l_nll = nll_loss(model, inp, doc.reference)
        l_rank = None
        if include_rank and len(ranked) >= 2:
            memory_t = model.encode(inp)
            d = model.cfg.encoder.d_model
            z_X = ad.reshape(ad.embedding_gather(memory_t, [0]), (d,))
            zs = []
            for c in ranked:
                hidden = model.decode_hidden(memory_t, [BOS] + list(c.tokens)[:-1])
                zs.append(ad.reshape(ad.embedding_gather(hidden, [hidden.shape[0] - 1]), (d,)))
            rl = ranking_loss(z_X, stack_rows(zs), cfg.margin, normalize=cfg.rank_loss_normalize)
            l_rank = rl.loss
        loss = l_nll if l_rank is None else ad.add(l_nll, l_rank)
        ad.backward(loss)
    lr = ad.transformer_lr(model.cfg.encoder.d_model, step, cfg.lr_warmup) * cfg.lr_scale
    params = model.param_list()
    ad.adam_step(params, opt, lr)
    ad.zero_grads(params)
    ls = float(l_nll.data)
    lrk = 0.0 if l_rank is None else float(l_rank.data)
    return StepReport(
        step=step, l_sum=ls, l_rank=lrk, total=ls + lrk,
        n_cands=len(ranked), ms=(time.perf_counter() - t0) * 1e3,
    )


@dataclass
class AbsTrainResult:
    model: Seq2SeqModel
    reports: list[StepReport]


def train_abs(
    model: Seq2SeqModel, dataset: Dataset, cfg: AbsTrainConfig, checkpoint_path=None
) -> AbsTrainResult:
    """NLL warmup then combined NLL + online ranking over decoded beams.

    The combined phase steps one document at a time (a beam search per
    document dominates the cost); warmup batches documents.
    """
    if not dataset.documents:
        raise ColoError("train_abs: empty dataset")
    rng = random.Random(cfg.seed)
    inputs = {
        d.id: build_model_input(d, dataset.vocab, model.cfg.encoder.max_len)
        for d in dataset.documents
    }
    opt = ad.AdamState(model.param_list())
    reports: list[StepReport] = []
    queue: list[Document] = []

    def next_doc() -> Document:
        nonlocal queue
        if not queue:
            queue = list(dataset.documents)
            rng.shuffle(queue)
        return queue.pop()

    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.warmup_steps_nll:
            t0 = time.perf_counter()
            batch = [next_doc() for _ in range(cfg.batch_size)]
            with ad.Tape():
                terms = [nll_loss(model, inputs[d.id], d.reference) for d in batch]
                loss = terms[0]
                for t in terms[1:]:
                    loss = ad.add(loss, t)
                loss = ad.scale(loss, 1.0 / len(batch))
                ad.backward(loss)
            lr = ad.transformer_lr(model.cfg.encoder.d_model, step, cfg.lr_warmup) * cfg.lr_scale
            params = model.param_list()
            ad.adam_step(params, opt, lr)
            ad.zero_grads(params)
            reports.append(
                StepReport(step, float(loss.data), 0.0, float(loss.data), 0,
                           (time.perf_counter() - t0) * 1e3)
            )
        else:
            doc = next_doc()
            reports.append(
                train_step_abs_online(model, doc, inputs[doc.id], cfg, opt, step)
            )
    if checkpoint_path:
        model.save(checkpoint_path)
    return AbsTrainResult(model=model, reports=reports)


def decode_candidates(model: Seq2SeqModel, inp: ModelInput) -> tuple[list[DecodedCandidate], np.ndarray]:
    """Beams plus the document vector, computed without gradient tracking."""
    memory = model.encode(inp)
    cands = diverse_beam_search(model.step_fn(memory), model.cfg)
    return cands, memory.data[0].astype(np.float64)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def select_abs(model: Seq2SeqModel, doc: Document, vocab, by: str = "cosine") -> DecodedCandidate:
    """Pick a beam by cosine to the document vector (ties: higher logprob).

    ``by='map'`` instead returns the highest-logprob beam, the selection
    rule the cosine re-ranking replaces.
    """
    if by not in ("cosine", "map"):
        raise ColoError(f"select_abs: unknown rule {by!r}")
    inp = build_model_input(doc, vocab, model.cfg.encoder.max_len)
    cands, z_X = decode_candidates(model, inp)
    if not cands:
        raise ColoError(f"select_abs: no candidates decoded for {doc.id}")
    if by == "map":
        return max(cands, key=lambda c: (c.logprob, tuple(-t for t in c.tokens)))
    best, best_cos = None, None
    for c in cands:
        cos = _cosine(z_X, c.z_C.astype(np.float64))
        if best is None or cos > best_cos or (cos == best_cos and c.logprob > best.logprob):
            best, best_cos = c, cos
    return best
