"""Small pre-norm self-attention encoder and the extractive sentence scorer.

One readout convention drives the whole extractive path: the final hidden
state at the document marker is the document vector z_X, the state at each
sentence marker is that sentence's embedding h_i, and a 3-layer MLP with a
sigmoid head turns each h_i into a selection probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import ModelInput
from .errors import ColoError, ShapeError


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 1
    n_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 256
    dropout: float = 0.0
    use_positions: bool = True
    max_rel: int = 16

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ColoError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.dropout != 0.0:
            raise ColoError("dropout is fixed to 0 at this scale")


def _init_matrix(rng, shape, dtype):
    return Tensor(rng.normal(0.0, 0.02, size=shape), requires_grad=True, dtype=dtype)


def init_encoder_params(
    cfg: EncoderConfig, rng, dtype=np.float32, prefix: str = "enc"
) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    p[f"{prefix}.tok_emb"] = _init_matrix(rng, (cfg.vocab_size, cfg.d_model), dtype)
    p[f"{prefix}.pos_emb"] = _init_matrix(rng, (cfg.max_len, cfg.d_model), dtype)
    dh = cfg.d_model // cfg.n_heads
    for i in range(cfg.n_layers):
        base = f"{prefix}.layer{i}"
        for name in ("ln1", "ln2"):
            p[f"{base}.{name}.g"] = Tensor(
                np.ones(cfg.d_model), requires_grad=True, dtype=dtype
            )
            p[f"{base}.{name}.b"] = Tensor(
                np.zeros(cfg.d_model), requires_grad=True, dtype=dtype
            )
        for h in range(cfg.n_heads):
            for name in ("wq", "wk", "wv"):
                p[f"{base}.h{h}.{name}"] = _init_matrix(rng, (cfg.d_model, dh), dtype)
            p[f"{base}.h{h}.rel"] = Tensor(
                np.zeros((2 * cfg.max_rel + 1, 1)), requires_grad=True, dtype=dtype
            )
        p[f"{base}.wo"] = _init_matrix(rng, (cfg.d_model, cfg.d_model), dtype)
        p[f"{base}.bo"] = Tensor(np.zeros(cfg.d_model), requires_grad=True, dtype=dtype)
        p[f"{base}.w1"] = _init_matrix(rng, (cfg.d_model, cfg.ffn_dim), dtype)
        p[f"{base}.b1"] = Tensor(np.zeros(cfg.ffn_dim), requires_grad=True, dtype=dtype)
        p[f"{base}.w2"] = _init_matrix(rng, (cfg.ffn_dim, cfg.d_model), dtype)
        p[f"{base}.b2"] = Tensor(np.zeros(cfg.d_model), requires_grad=True, dtype=dtype)
    p[f"{prefix}.lnf.g"] = Tensor(np.ones(cfg.d_model), requires_grad=True, dtype=dtype)
    p[f"{prefix}.lnf.b"] = Tensor(np.zeros(cfg.d_model), requires_grad=True, dtype=dtype)
    return p


def rel_index_matrix(T: int, max_rel: int) -> np.ndarray:
    """Bucket index of the clipped offset j - i for every position pair."""
    offs = np.arange(T)[None, :] - np.arange(T)[:, None]
    return np.clip(offs, -max_rel, max_rel) + max_rel


def _self_attention(
    p,
    base: str,
    x: Tensor,
    n_heads: int,
    mask: np.ndarray | None,
    rel_idx: np.ndarray | None,
):
    dh = x.shape[1] // n_heads
    scale = 1.0 / math.sqrt(dh)
    T = x.shape[0]
    heads = []
    for h in range(n_heads):
        q = ad.matmul(x, p[f"{base}.h{h}.wq"])
        k = ad.matmul(x, p[f"{base}.h{h}.wk"])
        v = ad.matmul(x, p[f"{base}.h{h}.wv"])
        scores = ad.scale(ad.matmul(q, ad.transpose(k)), scale)
        if rel_idx is not None:
            bias = ad.reshape(
                ad.embedding_gather(p[f"{base}.h{h}.rel"], rel_idx.ravel()), (T, T)
            )
            scores = ad.add(scores, bias)
        if mask is not None:
            scores = ad.shift(scores, mask)
        attn = ad.softmax(scores, axis=-1)
        heads.append(ad.matmul(attn, v))
    ctx = heads[0] if n_heads == 1 else ad.concat(heads, axis=1)
    return ad.add(ad.matmul(ctx, p[f"{base}.wo"]), p[f"{base}.bo"])


def _ffn(p, base: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.add(ad.matmul(x, p[f"{base}.w1"]), p[f"{base}.b1"]))
    return ad.add(ad.matmul(h, p[f"{base}.w2"]), p[f"{base}.b2"])


def encoder_forward(
    p: dict[str, Tensor],
    cfg: EncoderConfig,
    token_ids,
    prefix: str = "enc",
    mask: np.ndarray | None = None,
) -> Tensor:
    """Hidden states (T, d_model) for one token sequence."""
    ids = list(token_ids)
    if len(ids) == 0:
        raise ShapeError("encoder_forward: empty input")
    if len(ids) > cfg.max_len:
        raise ShapeError(f"encoder_forward: input length {len(ids)} > max_len {cfg.max_len}")
    x = ad.embedding_gather(p[f"{prefix}.tok_emb"], ids)
    if cfg.use_positions:
        pos = ad.embedding_gather(p[f"{prefix}.pos_emb"], list(range(len(ids))))
        x = ad.add(x, pos)
    # max_rel=0 collapses the bias to a single bucket, which together with
    # use_positions=False makes the encoder fully position-symmetric
    rel_idx = rel_index_matrix(len(ids), cfg.max_rel) if cfg.max_rel > 0 else None
    for i in range(cfg.n_layers):
        base = f"{prefix}.layer{i}"
        a = _self_attention(
            p,
            base,
            ad.layer_norm(x, p[f"{base}.ln1.g"], p[f"{base}.ln1.b"]),
            cfg.n_heads,
            mask,
            rel_idx,
        )
        x = ad.add(x, a)
        f = _ffn(p, base, ad.layer_norm(x, p[f"{base}.ln2.g"], p[f"{base}.ln2.b"]))
        x = ad.add(x, f)
    return ad.layer_norm(x, p[f"{prefix}.lnf.g"], p[f"{prefix}.lnf.b"])


@dataclass
class EncoderOutput:
    z_X: Tensor
    h: Tensor
    sentence_probs: Tensor

    def probs_list(self) -> list[float]:
        return [float(v) for v in self.sentence_probs.data]


class ExtractiveModel:
    """Encoder plus sentence classifier with a flat named-parameter store."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.params = init_encoder_params(cfg, rng, dtype=dtype, prefix="enc")
        d = cfg.d_model
        self.params["clf.w1"] = _init_matrix(rng, (d, d), dtype)
        self.params["clf.b1"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
        self.params["clf.w2"] = _init_matrix(rng, (d, d), dtype)
        self.params["clf.b2"] = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)
        self.params["clf.w3"] = _init_matrix(rng, (d, 1), dtype)
        self.params["clf.b3"] = Tensor(np.zeros(1), requires_grad=True, dtype=dtype)
        self.encode_calls = 0

    def param_items(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def param_list(self) -> list[Tensor]:
        return [t for _, t in self.param_items()]

    def classify(self, h: Tensor) -> Tensor:
        """Selection probability in (0,1) for each row of h."""
        x = h if h.ndim == 2 else ad.reshape(h, (1, h.shape[0]))
        p = self.params
        x = ad.relu(ad.add(ad.matmul(x, p["clf.w1"]), p["clf.b1"]))
        x = ad.relu(ad.add(ad.matmul(x, p["clf.w2"]), p["clf.b2"]))
        x = ad.add(ad.matmul(x, p["clf.w3"]), p["clf.b3"])
        return ad.sigmoid(ad.reshape(x, (x.shape[0],)))

    def encode(self, inp: ModelInput) -> EncoderOutput:
        self.encode_calls += 1
        hidden = encoder_forward(self.params, self.cfg, inp.token_ids, prefix="enc")
        T = hidden.shape[0]
        if inp.doc_pos >= T or (inp.cls_pos and max(inp.cls_pos) >= T):
            raise ShapeError("encode: marker position out of range")
        z_X = ad.reshape(
            ad.embedding_gather(hidden, [inp.doc_pos]), (self.cfg.d_model,)
        )
        h = ad.embedding_gather(hidden, inp.cls_pos)
        probs = self.classify(h)
        return EncoderOutput(z_X=z_X, h=h, sentence_probs=probs)

    def save(self, path) -> None:
        named = [(n, t.data) for n, t in self.param_items()]
        ad.save_arrays(path, named, meta={"kind": "extractive", **asdict(self.cfg)})

    @classmethod
    def load(cls, path) -> "ExtractiveModel":
        arrays, meta = ad.load_arrays(path)
        if meta.get("kind") != "extractive":
            raise ColoError(f"checkpoint kind {meta.get('kind')!r} is not extractive")
        cfg = EncoderConfig(
            **{k: meta[k] for k in (
                "vocab_size", "d_model", "n_layers", "n_heads",
                "ffn_dim", "max_len", "dropout", "use_positions", "max_rel",
            )}
        )
        model = cls(cfg, seed=0)
        for name, t in model.param_items():
            if name not in arrays:
                raise ColoError(f"checkpoint missing tensor {name}")
            if arrays[name].shape != t.shape:
                raise ColoError(f"checkpoint tensor {name} has shape {arrays[name].shape}")
            t.data = arrays[name].astype(model.dtype)
        return model


def candidate_embedding(output: EncoderOutput, indices) -> Tensor:
    """Mean of the selected sentence embeddings (differentiable)."""
    idx = sorted(set(indices))
    if not idx:
        raise ColoError("candidate_embedding: empty index set")
    if idx[-1] >= output.h.shape[0] or idx[0] < 0:
        raise ColoError(
            f"candidate_embedding: index out of range for {output.h.shape[0]} sentences"
        )
    return ad.mean_pool(output.h, idx)
