"""Minimal reverse-mode automatic differentiation over numpy arrays.

Gradients are tracked only inside an active :class:`Tape` context; outside a
tape every operation is a plain numpy computation, which keeps the inference
paths free of bookkeeping overhead.  Storage defaults to float32 while
reductions (sums, norms, normalization statistics) accumulate in float64.
"""

from __future__ import annotations

import json
import math
import threading

import numpy as np

from .errors import ShapeError, ColoError

DEFAULT_DTYPE = np.float32

CHECKPOINT_VERSION = 1


class Tensor:
    """Dense array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_STATE = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_STATE, "tapes"):
        _STATE.tapes = []
    return _STATE.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations, replayed in reverse by :func:`backward`."""

    def __init__(self):
        self._entries: list[tuple[Tensor, callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._entries)


def record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
    """Register ``backward_fn`` for ``out`` if a tape is active and needed.

    ``backward_fn`` receives the upstream gradient of ``out`` and must
    accumulate into the grads of any ``requires_grad`` inputs.
    """
    tape = active_tape()
    if tape is None:
        return
    if not any(t.requires_grad for t in inputs):
        return
    out.requires_grad = True
    tape._entries.append((out, backward_fn))


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf, clear tape."""
    tape = active_tape()
    if tape is None or not tape._entries:
        raise ColoError("backward: no recorded tape")
    if loss.shape != ():
        raise ColoError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones((), dtype=loss.dtype)
    for out, fn in reversed(tape._entries):
        if out.grad is None:
            continue
        fn(out.grad)
    tape._entries.clear()


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    record(out, (a, b), bw)
    return out


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: need 2-d tensor, got {x.shape}")
    out = Tensor(x.data.T.copy())

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g.T)

    record(out, (x,), bw)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; the single broadcast allowed is a (n,d)+(d,) bias."""
    if a.shape == b.shape:
        bias_mode = False
    elif a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        bias_mode = True
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0) if bias_mode else g)

    record(out, (a, b), bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} - {b.shape}")
    out = Tensor(a.data - b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    record(out, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data)

    def bw(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    record(out, (a, b), bw)
    return out


def scale(x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * s)

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g * s)

    record(out, (x,), bw)
    return out


def shift(x: Tensor, c) -> Tensor:
    """Add a constant scalar or array (no gradient through the constant)."""
    out = Tensor(x.data + np.asarray(c, dtype=x.dtype))

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g)

    record(out, (x,), bw)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    record(out, (x,), bw)
    return out


def hinge(x: Tensor) -> Tensor:
    """max(0, x) with the subgradient at 0 fixed to 0."""
    return relu(x)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y)

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g * y * (1.0 - y))

    record(out, (x,), bw)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g / x.data)

    record(out, (x,), bw)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    e = np.exp((xd - m).astype(np.float64))
    y = (e / e.sum(axis=axis, keepdims=True)).astype(xd.dtype)
    out = Tensor(y)

    def bw(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x.accumulate_grad(y * (g - inner))

    record(out, (x,), bw)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    shifted = (xd - m).astype(np.float64)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = (shifted - lse).astype(xd.dtype)
    out = Tensor(y)
    soft = np.exp(y.astype(np.float64)).astype(xd.dtype)

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g - soft * g.sum(axis=axis, keepdims=True))

    record(out, (x,), bw)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis of a 2-d tensor, then apply gain and bias."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: need 2-d tensor, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match width {d}"
        )
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    y = (xhat * gain.data.astype(np.float64) + bias.data.astype(np.float64)).astype(
        x.dtype
    )
    out = Tensor(y)

    def bw(g):
        g64 = g.astype(np.float64)
        if gain.requires_grad:
            gain.accumulate_grad((g64 * xhat).sum(axis=0).astype(gain.dtype))
        if bias.requires_grad:
            bias.accumulate_grad(g64.sum(axis=0).astype(bias.dtype))
        if x.requires_grad:
            dxhat = g64 * gain.data.astype(np.float64)
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            x.accumulate_grad((inv * (dxhat - m1 - xhat * m2)).astype(x.dtype))

    record(out, (x, gain, bias), bw)
    return out


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Select rows of ``table`` by integer index (also used as a row gather)."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding_gather: ids must be 1-d, got {idx.shape}")
    if table.ndim != 2:
        raise ShapeError(f"embedding_gather: table must be 2-d, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_gather: index out of range for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[idx])

    def bw(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            table.accumulate_grad(acc)

    record(out, (table,), bw)
    return out


def take_per_row(x: Tensor, cols) -> Tensor:
    """Pick one entry per row: out[i] = x[i, cols[i]]."""
    idx = np.asarray(cols, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"take_per_row: shapes {x.shape} with {idx.shape}")
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])

    def bw(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            np.add.at(acc, (rows, idx), g)
            x.accumulate_grad(acc)

    record(out, (x,), bw)
    return out


def mean_pool(x: Tensor, indices) -> Tensor:
    """Arithmetic mean of the selected rows of a 2-d tensor."""
    idx = np.asarray(sorted(indices), dtype=np.int64)
    if idx.size == 0:
        raise ShapeError("mean_pool: empty index set")
    if x.ndim != 2 or idx.max() >= x.shape[0] or idx.min() < 0:
        raise ShapeError(f"mean_pool: indices out of range for shape {x.shape}")
    k = idx.size
    out = Tensor(
        (x.data[idx].astype(np.float64).sum(axis=0) / k).astype(x.dtype)
    )

    def bw(g):
        if x.requires_grad:
            acc = np.zeros_like(x.data)
            np.add.at(acc, idx, g / k)
            x.accumulate_grad(acc)

    record(out, (x,), bw)
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                t.accumulate_grad(g[tuple(sl)])

    record(out, tuple(tensors), bw)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    record(out, (x,), bw)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g))

    record(out, (x,), bw)
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.dtype))

    def bw(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g / n))

    record(out, (x,), bw)
    return out


def _norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(v.astype(np.float64) ** 2)))


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    if u.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity: shapes {u.shape} and {v.shape}")
    nu, nv = _norm(u.data), _norm(v.data)
    if nu == 0.0 or nv == 0.0:
        raise ShapeError("cosine_similarity: zero-norm input")
    ud = u.data.astype(np.float64)
    vd = v.data.astype(np.float64)
    c = float(ud @ vd) / (nu * nv)
    out = Tensor(np.asarray(c, dtype=u.dtype))

    def bw(g):
        gf = float(g)
        if u.requires_grad:
            u.accumulate_grad((gf * (vd / (nu * nv) - c * ud / (nu * nu))).astype(u.dtype))
        if v.requires_grad:
            v.accumulate_grad((gf * (ud / (nu * nv) - c * vd / (nv * nv))).astype(v.dtype))

    record(out, (u, v), bw)
    return out


def cosine_rows(m: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity between each row of ``m`` and the vector ``v``."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"cosine_rows: shapes {m.shape} and {v.shape}")
    md = m.data.astype(np.float64)
    vd = v.data.astype(np.float64)
    row_norms = np.sqrt((md**2).sum(axis=1))
    nv = _norm(v.data)
    if nv == 0.0 or np.any(row_norms == 0.0):
        raise ShapeError("cosine_rows: zero-norm input")
    dots = md @ vd
    c = dots / (row_norms * nv)
    out = Tensor(c.astype(m.dtype))

    def bw(g):
        g64 = g.astype(np.float64)
        if m.requires_grad:
            dm = (
                vd[None, :] / (row_norms[:, None] * nv)
                - c[:, None] * md / (row_norms[:, None] ** 2)
            ) * g64[:, None]
            m.accumulate_grad(dm.astype(m.dtype))
        if v.requires_grad:
            dv = (
                md / (row_norms[:, None] * nv) - np.outer(c, vd) / (nv * nv)
            ) * g64[:, None]
            v.accumulate_grad(dv.sum(axis=0).astype(v.dtype))

    record(out, (m, v), bw)
    return out


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers (float64) plus the shared step counter."""

    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.t = 0


def adam_step(
    params: list[Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    state.t += 1
    t = state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if g is None:
            continue
        g64 = g.astype(np.float64)
        m *= beta1
        m += (1.0 - beta1) * g64
        v *= beta2
        v += (1.0 - beta2) * g64 * g64
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def transformer_lr(d_model: int, step: int, warmup: int) -> float:
    """Inverse-sqrt learning rate with linear warmup; step counts from 1."""
    if step < 1:
        raise ColoError("transformer_lr: step counts from 1")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# checkpoint container: one JSON header line, then float32 LE arrays in order


def save_arrays(path, named: list[tuple[str, np.ndarray]], meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "dtype": "float32",
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in named],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, a in named:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ColoError(f"checkpoint version {header.get('version')} not supported")
        arrays: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(math.prod(shape)) if shape else 1
            buf = f.read(count * 4)
            if len(buf) != count * 4:
                raise ColoError(f"checkpoint truncated while reading {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return arrays, header.get("meta", {})
