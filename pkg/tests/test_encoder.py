"""Encoder forward conventions, permutation symmetry, and checkpointing."""

import numpy as np
import pytest

from colo import autodiff as ad
from colo.corpus import ModelInput, Document, SynthSpec, build_model_input, synth_corpus
from colo.encoder import (
    EncoderConfig,
    ExtractiveModel,
    candidate_embedding,
    encoder_forward,
    rel_index_matrix,
)
from colo.errors import ColoError, ShapeError


def tiny_cfg(**kw):
    base = dict(vocab_size=30, d_model=16, n_layers=1, n_heads=4, ffn_dim=32, max_len=32)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_input():
    # <doc> <cls> 7 <sep> <cls> 8 9 <sep> <cls> 10 <sep>
    return ModelInput(
        token_ids=[2, 3, 7, 4, 3, 8, 9, 4, 3, 10, 4],
        doc_pos=0,
        cls_pos=[1, 4, 8],
        sent_spans=[(2, 3), (5, 7), (9, 10)],
    )


def test_config_validation():
    with pytest.raises(ColoError, match="divisible"):
        tiny_cfg(d_model=10, n_heads=4)
    with pytest.raises(ColoError, match="dropout"):
        tiny_cfg(dropout=0.1)


def test_rel_index_matrix():
    assert rel_index_matrix(3, 1).tolist() == [[1, 2, 2], [0, 1, 2], [0, 0, 1]]
    m = rel_index_matrix(5, 16)
    assert m.shape == (5, 5)
    assert m.min() >= 0 and m.max() <= 32
    assert np.array_equal(np.diag(m), np.full(5, 16))


def test_encode_shapes_and_probs():
    model = ExtractiveModel(tiny_cfg(), seed=0)
    out = model.encode(tiny_input())
    assert out.z_X.shape == (16,)
    assert out.h.shape == (3, 16)
    assert out.sentence_probs.shape == (3,)
    probs = out.probs_list()
    assert len(probs) == 3
    for p in probs:
        assert 0.0 < p < 1.0


def test_encode_deterministic_and_counts_calls():
    a = ExtractiveModel(tiny_cfg(), seed=0)
    b = ExtractiveModel(tiny_cfg(), seed=0)
    assert a.encode_calls == 0
    oa = a.encode(tiny_input())
    ob = b.encode(tiny_input())
    assert np.array_equal(oa.h.data, ob.h.data)
    assert np.array_equal(oa.z_X.data, ob.z_X.data)
    a.encode(tiny_input())
    assert a.encode_calls == 2 and b.encode_calls == 1
    c = ExtractiveModel(tiny_cfg(), seed=1)
    assert not np.array_equal(a.encode(tiny_input()).h.data, oa.h.data) or not np.array_equal(
        c.encode(tiny_input()).h.data, oa.h.data
    )


def test_param_names_sorted_and_complete():
    model = ExtractiveModel(tiny_cfg(), seed=0)
    names = [n for n, _ in model.param_items()]
    assert names == sorted(names)
    for required in ("enc.tok_emb", "enc.pos_emb", "clf.w1", "clf.b3", "enc.lnf.g"):
        assert required in names


def test_encoder_forward_input_limits():
    model = ExtractiveModel(tiny_cfg(max_len=8), seed=0)
    with pytest.raises(ShapeError, match="empty"):
        encoder_forward(model.params, model.cfg, [])
    with pytest.raises(ShapeError, match="max_len"):
        encoder_forward(model.params, model.cfg, list(range(7, 16)))


def test_encode_rejects_marker_out_of_range():
    model = ExtractiveModel(tiny_cfg(), seed=0)
    bad = ModelInput(token_ids=[2, 3, 7, 4], doc_pos=0, cls_pos=[10], sent_spans=[(2, 3)])
    with pytest.raises(ShapeError, match="marker"):
        model.encode(bad)


def test_position_free_encoder_is_permutation_symmetric():
    # with no absolute positions and a single relative bucket, hidden state i
    # can depend only on token i and the multiset of all tokens
    cfg = tiny_cfg(use_positions=False, max_rel=0)
    model = ExtractiveModel(cfg, seed=0)
    ids = [7, 9, 11, 13, 8]
    perm = [3, 0, 4, 2, 1]
    base = encoder_forward(model.params, cfg, ids).data
    permuted = encoder_forward(model.params, cfg, [ids[i] for i in perm]).data
    assert np.allclose(permuted, base[perm], atol=1e-5)


def test_positions_break_symmetry():
    cfg = tiny_cfg(use_positions=True)
    model = ExtractiveModel(cfg, seed=0)
    ids = [7, 9, 11]
    fwd = encoder_forward(model.params, cfg, ids).data
    rev = encoder_forward(model.params, cfg, ids[::-1]).data
    assert not np.allclose(rev, fwd[::-1], atol=1e-5)


def test_classify_accepts_single_row():
    model = ExtractiveModel(tiny_cfg(), seed=0)
    out = model.encode(tiny_input())
    row = ad.Tensor(out.h.data[0])
    assert model.classify(row).shape == (1,)


def test_candidate_embedding_mean_and_grads():
    model = ExtractiveModel(tiny_cfg(), seed=0)
    with ad.Tape():
        out = model.encode(tiny_input())
        emb = candidate_embedding(out, [2, 0, 2])
        assert np.allclose(emb.data, out.h.data[[0, 2]].mean(axis=0), atol=1e-6)
        ad.backward(ad.sum_all(emb))
    assert model.params["enc.tok_emb"].grad is not None
    with pytest.raises(ColoError, match="empty"):
        candidate_embedding(out, [])
    with pytest.raises(ColoError, match="out of range"):
        candidate_embedding(out, [5])


def test_save_load_roundtrip(tmp_path):
    spec = SynthSpec(n_docs=2, vocab_size=40, sentences_range=(6, 8), topic_size=8)
    ds = synth_corpus(spec, seed=0)
    model = ExtractiveModel(tiny_cfg(vocab_size=len(ds.vocab)), seed=3)
    inp = build_model_input(ds.documents[0], ds.vocab, max_len=32)
    before = model.encode(inp)
    path = tmp_path / "model.npz"
    model.save(path)
    loaded = ExtractiveModel.load(path)
    assert loaded.cfg == model.cfg
    for (na, ta), (nb, tb) in zip(model.param_items(), loaded.param_items()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
    after = loaded.encode(inp)
    assert np.array_equal(before.h.data, after.h.data)
    assert np.array_equal(before.sentence_probs.data, after.sentence_probs.data)


def test_load_rejects_bad_checkpoints(tmp_path):
    from dataclasses import asdict

    model = ExtractiveModel(tiny_cfg(), seed=0)
    meta = {"kind": "extractive", **asdict(model.cfg)}

    wrong_kind = tmp_path / "kind.npz"
    ad.save_arrays(wrong_kind, [(n, t.data) for n, t in model.param_items()], meta={**meta, "kind": "other"})
    with pytest.raises(ColoError, match="not extractive"):
        ExtractiveModel.load(wrong_kind)

    missing = tmp_path / "missing.npz"
    named = [(n, t.data) for n, t in model.param_items() if n != "clf.w2"]
    ad.save_arrays(missing, named, meta=meta)
    with pytest.raises(ColoError, match="missing tensor clf.w2"):
        ExtractiveModel.load(missing)

    badshape = tmp_path / "shape.npz"
    named = [
        (n, t.data if n != "clf.w1" else t.data[:4]) for n, t in model.param_items()
    ]
    ad.save_arrays(badshape, named, meta=meta)
    with pytest.raises(ColoError, match="clf.w1 has shape"):
        ExtractiveModel.load(badshape)
