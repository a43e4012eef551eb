"""Gradient checks for every op against central finite differences.

The finite-difference oracle lives in conftest and only runs forward passes,
so these tests never trust the backward code they verify.  Kinked ops (relu,
hinge) get inputs nudged away from zero; log gets strictly positive inputs.
"""

import numpy as np
import pytest

from colo import autodiff as ad
from colo.errors import ColoError, ShapeError
from conftest import fd_grad, gradcheck, max_rel_err


def t64(arr, requires_grad=True):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def wsum(out, w):
    # fixed random projection turns any output into a scalar without
    # hiding sign errors the way a plain sum would
    return ad.sum_all(ad.mul(out, ad.Tensor(np.asarray(w, dtype=np.float64))))


def away_from_zero(rng, shape, margin=0.1):
    return (rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape))


# ---------------------------------------------------------------------------
# per-op gradient checks


def test_matmul_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = t64(rng.standard_normal((3, 4)))
        b = t64(rng.standard_normal((4, 5)))
        w = rng.standard_normal((3, 5))
        gradcheck(lambda: wsum(ad.matmul(a, b), w), [a, b])


def test_transpose_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((3, 4)))
        w = rng.standard_normal((4, 3))
        gradcheck(lambda: wsum(ad.transpose(x), w), [x])


def test_add_grad_same_shape():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = t64(rng.standard_normal((3, 4)))
        b = t64(rng.standard_normal((3, 4)))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.add(a, b), w), [a, b])


def test_add_grad_bias_broadcast():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = t64(rng.standard_normal((3, 4)))
        b = t64(rng.standard_normal(4))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.add(a, b), w), [a, b])


def test_sub_mul_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = t64(rng.standard_normal((3, 4)))
        b = t64(rng.standard_normal((3, 4)))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.sub(a, b), w), [a, b])
        gradcheck(lambda: wsum(ad.mul(a, b), w), [a, b])


def test_scale_shift_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((3, 4)))
        w = rng.standard_normal((3, 4))
        c = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.scale(x, 1.7), w), [x])
        gradcheck(lambda: wsum(ad.scale(x, -0.3), w), [x])
        gradcheck(lambda: wsum(ad.shift(x, 0.5), w), [x])
        gradcheck(lambda: wsum(ad.shift(x, c), w), [x])


def test_relu_hinge_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(away_from_zero(rng, (3, 4)))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.relu(x), w), [x])
        gradcheck(lambda: wsum(ad.hinge(x), w), [x])


def test_hinge_clamps_negative():
    x = t64([[-2.0, 3.0, -0.5]])
    out = ad.hinge(x)
    assert np.array_equal(out.data, [[0.0, 3.0, 0.0]])


def test_sigmoid_log_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((3, 4)))
        pos = t64(rng.uniform(0.2, 2.0, (3, 4)))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.sigmoid(x), w), [x])
        gradcheck(lambda: wsum(ad.log(pos), w), [pos])


def test_sigmoid_extreme_inputs_stable():
    x = t64([[-800.0, 0.0, 800.0]])
    y = ad.sigmoid(x).data
    assert np.all(np.isfinite(y))
    assert y[0, 0] == 0.0 and y[0, 1] == 0.5 and y[0, 2] == 1.0


def test_softmax_grad_both_axes():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((3, 4)))
        w = rng.standard_normal((3, 4))
        for axis in (-1, 0):
            gradcheck(lambda: wsum(ad.softmax(x, axis=axis), w), [x])
            gradcheck(lambda: wsum(ad.log_softmax(x, axis=axis), w), [x])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    x = t64(rng.standard_normal((4, 6)) * 10.0)
    y = ad.softmax(x, axis=-1).data
    assert np.allclose(y.sum(axis=-1), 1.0)
    ly = ad.log_softmax(x, axis=-1).data
    assert np.allclose(np.exp(ly), y)


def test_layer_norm_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((3, 4)))
        gain = t64(rng.uniform(0.5, 1.5, 4))
        bias = t64(rng.standard_normal(4))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.layer_norm(x, gain, bias), w), [x, gain, bias])


def test_embedding_gather_grad_repeated_ids():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        table = t64(rng.standard_normal((5, 3)))
        ids = [0, 2, 2, 4, 0]
        w = rng.standard_normal((5, 3))
        gradcheck(lambda: wsum(ad.embedding_gather(table, ids), w), [table])
        # unused rows get exactly zero gradient
        assert np.array_equal(table.grad[1], np.zeros(3))
        assert np.array_equal(table.grad[3], np.zeros(3))


def test_take_per_row_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((4, 5)))
        w = rng.standard_normal(4)
        gradcheck(lambda: wsum(ad.take_per_row(x, [1, 0, 3, 3]), w), [x])


def test_mean_pool_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((5, 3)))
        w = rng.standard_normal(3)
        # unsorted duplicate-free index set; implementation sorts it
        gradcheck(lambda: wsum(ad.mean_pool(x, [3, 0, 2]), w), [x])


def test_mean_pool_matches_numpy():
    rng = np.random.default_rng(1)
    x = t64(rng.standard_normal((6, 4)))
    got = ad.mean_pool(x, [5, 1]).data
    assert np.allclose(got, x.data[[1, 5]].mean(axis=0))


def test_concat_grad_both_axes():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        parts0 = [t64(rng.standard_normal((k, 3))) for k in (2, 1, 3)]
        w0 = rng.standard_normal((6, 3))
        gradcheck(lambda: wsum(ad.concat(parts0, axis=0), w0), parts0)
        parts1 = [t64(rng.standard_normal((3, k))) for k in (2, 1)]
        w1 = rng.standard_normal((3, 3))
        gradcheck(lambda: wsum(ad.concat(parts1, axis=1), w1), parts1)


def test_reshape_grad():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((2, 6)))
        w = rng.standard_normal((3, 4))
        gradcheck(lambda: wsum(ad.reshape(x, (3, 4)), w), [x])


def test_sum_all_grad_is_ones():
    x = t64(np.arange(6.0).reshape(2, 3))
    with ad.Tape():
        ad.backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_mean_all_grad_is_uniform():
    x = t64(np.arange(6.0).reshape(2, 3))
    with ad.Tape():
        ad.backward(ad.mean_all(x))
    assert np.allclose(x.grad, np.full((2, 3), 1.0 / 6.0))


def test_cosine_similarity_grad_and_value():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        u = t64(rng.standard_normal(6))
        v = t64(rng.standard_normal(6))
        c = ad.cosine_similarity(u, v).item()
        want = float(u.data @ v.data / (np.linalg.norm(u.data) * np.linalg.norm(v.data)))
        assert abs(c - want) < 1e-12
        gradcheck(lambda: ad.cosine_similarity(u, v), [u, v])


def test_cosine_rows_grad_and_value():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        m = t64(rng.standard_normal((4, 6)))
        v = t64(rng.standard_normal(6))
        rows = ad.cosine_rows(m, v).data
        for i in range(4):
            want = ad.cosine_similarity(t64(m.data[i]), t64(v.data)).item()
            assert abs(rows[i] - want) < 1e-12
        w = rng.standard_normal(4)
        gradcheck(lambda: wsum(ad.cosine_rows(m, v), w), [m, v])


def test_composite_chain_grad():
    # several ops in one graph so accumulation across shared nodes is covered
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((3, 4)))
        w1 = t64(rng.standard_normal((4, 4)))
        gain = t64(rng.uniform(0.5, 1.5, 4))
        bias = t64(rng.standard_normal(4))
        proj = rng.standard_normal((3, 4))

        def build():
            h = ad.layer_norm(ad.matmul(x, w1), gain, bias)
            return wsum(ad.softmax(h, axis=-1), proj)

        gradcheck(build, [x, w1, gain, bias])


def test_grad_accumulates_across_uses():
    x = t64(np.array([1.0, -2.0, 3.0]))
    with ad.Tape():
        y = ad.add(x, x)
        ad.backward(ad.sum_all(y))
    assert np.array_equal(x.grad, np.full(3, 2.0))


# ---------------------------------------------------------------------------
# tape mechanics, dtypes, shape errors


def test_backward_requires_scalar_and_tape():
    x = t64(np.ones((2, 2)))
    with ad.Tape():
        y = ad.relu(x)
        with pytest.raises(ColoError, match="scalar"):
            ad.backward(y)
    with pytest.raises(ColoError, match="tape"):
        ad.backward(ad.Tensor(np.asarray(0.0)))


def test_no_tape_means_no_recording():
    x = t64(np.ones((2, 2)))
    y = ad.relu(x)
    assert y.requires_grad is False
    with ad.Tape() as tape:
        ad.relu(x)
        assert len(tape) == 1
    # constants are not recorded even inside a tape
    with ad.Tape() as tape:
        ad.relu(ad.Tensor(np.ones((2, 2))))
        assert len(tape) == 0


def test_tensor_dtype_defaults():
    # float inputs keep their precision; everything else becomes float32
    assert ad.Tensor([1.0, 2.0]).dtype == np.float64
    assert ad.Tensor(np.zeros(3, dtype=np.float32)).dtype == np.float32
    assert ad.Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
    assert ad.Tensor(np.zeros(3, dtype=np.int64)).dtype == np.float32
    assert ad.Tensor([1, 2], dtype=np.float64).dtype == np.float64


def test_grad_determinism():
    def run():
        rng = np.random.default_rng(7)
        x = t64(rng.standard_normal((4, 4)))
        w = t64(rng.standard_normal((4, 4)))
        with ad.Tape():
            loss = ad.sum_all(ad.sigmoid(ad.matmul(x, w)))
            ad.backward(loss)
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)


def test_zero_grads():
    x = t64(np.ones(3))
    with ad.Tape():
        ad.backward(ad.sum_all(x))
    assert x.grad is not None
    ad.zero_grads([x])
    assert x.grad is None


def test_shape_errors():
    a = t64(np.ones((2, 3)))
    b = t64(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.matmul(a, b)
    with pytest.raises(ShapeError):
        ad.add(a, t64(np.ones(2)))
    with pytest.raises(ShapeError):
        ad.sub(a, t64(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        ad.layer_norm(a, t64(np.ones(2)), t64(np.ones(3)))
    with pytest.raises(ShapeError):
        ad.embedding_gather(a, [[0]])
    with pytest.raises(ShapeError):
        ad.embedding_gather(a, [0, 2])
    with pytest.raises(ShapeError):
        ad.take_per_row(a, [0])
    with pytest.raises(ShapeError):
        ad.mean_pool(a, [])
    with pytest.raises(ShapeError):
        ad.concat([])
    with pytest.raises(ShapeError):
        ad.cosine_similarity(t64(np.zeros(3)), t64(np.ones(3)))
    with pytest.raises(ShapeError):
        ad.cosine_rows(t64(np.zeros((2, 3))), t64(np.ones(3)))


# ---------------------------------------------------------------------------
# optimizer and schedule


def ref_adam_step(p, g, m, v, t, lr, b1, b2, eps):
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * g * g
    mhat = m / (1.0 - b1**t)
    vhat = v / (1.0 - b2**t)
    return p - lr * mhat / (np.sqrt(vhat) + eps), m, v


def test_adam_first_step_closed_form():
    p = t64(np.array(0.5))
    state = ad.AdamState([p])
    p.grad = np.asarray(1.0)
    ad.adam_step([p], state, lr=0.1)
    # with m_hat = g and v_hat = g^2 the first update is lr * sign(g) / (1 + eps)
    assert abs(p.data - (0.5 - 0.1 / (1.0 + 1e-8))) < 1e-15
    assert state.t == 1


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(11)
    p = t64(rng.standard_normal((3, 2)))
    q = t64(rng.standard_normal(4))
    state = ad.AdamState([p, q])
    rp, rq = p.data.copy(), q.data.copy()
    mp = np.zeros_like(rp)
    vp = np.zeros_like(rp)
    mq = np.zeros_like(rq)
    vq = np.zeros_like(rq)
    for t in range(1, 6):
        gp = rng.standard_normal(p.shape)
        gq = rng.standard_normal(q.shape)
        p.grad = gp.copy()
        q.grad = gq.copy()
        ad.adam_step([p, q], state, lr=0.01)
        rp, mp, vp = ref_adam_step(rp, gp, mp, vp, t, 0.01, 0.9, 0.999, 1e-8)
        rq, mq, vq = ref_adam_step(rq, gq, mq, vq, t, 0.01, 0.9, 0.999, 1e-8)
        assert np.allclose(p.data, rp, rtol=1e-12, atol=0)
        assert np.allclose(q.data, rq, rtol=1e-12, atol=0)


def test_adam_skips_gradless_params():
    p = t64(np.array([1.0, 2.0]))
    q = t64(np.array([3.0]))
    state = ad.AdamState([p, q])
    p.grad = np.array([1.0, 1.0])
    before = q.data.copy()
    ad.adam_step([p, q], state, lr=0.1)
    assert np.array_equal(q.data, before)
    assert not np.array_equal(p.data, np.array([1.0, 2.0]))


def test_transformer_lr_schedule():
    d, warmup = 64, 100
    with pytest.raises(ColoError):
        ad.transformer_lr(d, 0, warmup)
    # linear ramp up to the corner, inverse sqrt after it
    for t in range(1, warmup):
        assert ad.transformer_lr(d, t, warmup) < ad.transformer_lr(d, t + 1, warmup)
    for t in range(warmup, 3 * warmup):
        assert ad.transformer_lr(d, t, warmup) > ad.transformer_lr(d, t + 1, warmup)
    corner = ad.transformer_lr(d, warmup, warmup)
    assert abs(corner - d**-0.5 * warmup**-0.5) < 1e-15


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    named = [
        ("enc.w", rng.standard_normal((3, 4)).astype(np.float32)),
        ("bias", rng.standard_normal(5).astype(np.float32)),
        ("scalar", np.array(2.5, dtype=np.float32)),
    ]
    path = tmp_path / "ck.npz"
    ad.save_arrays(path, named, meta={"kind": "extractive", "n": 3})
    arrays, meta = ad.load_arrays(path)
    assert meta == {"kind": "extractive", "n": 3}
    assert set(arrays) == {"enc.w", "bias", "scalar"}
    for name, want in named:
        assert arrays[name].shape == want.shape
        assert np.array_equal(arrays[name], want)


def test_checkpoint_truncated_and_bad_version(tmp_path):
    path = tmp_path / "ck.npz"
    ad.save_arrays(path, [("w", np.ones((4, 4), dtype=np.float32))])
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ColoError, match="truncated"):
        ad.load_arrays(path)
    bad = tmp_path / "bad.npz"
    header = b'{"version": 99, "dtype": "float32", "meta": {}, "tensors": []}\n'
    bad.write_bytes(header)
    with pytest.raises(ColoError, match="not supported"):
        ad.load_arrays(bad)
