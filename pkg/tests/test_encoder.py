import json

import numpy as np
import pytest

from hipath import numerics as nm
from hipath.corpus import DOC_TYPES
from hipath.encoder import (
    AttentionSink,
    DocumentRepresentation,
    EncoderConfig,
    attention_export,
    document_level_layer,
    encode,
    fuse,
    init_encoder_params,
    sinusoidal_encoding,
    word_level_layer,
)
from hipath.interpolation import MixPlan, mixed_targets
from hipath.numerics import Tensor

from helpers import make_encoded, seq


def small_cfg(**overrides):
    defaults = dict(hidden=16, heads=2, layers=1, ffn_mult=2, vocab_size=20, max_len=8, dropout=0.0)
    defaults.update(overrides)
    return EncoderConfig(**defaults)


@pytest.fixture
def setup():
    cfg = small_cfg()
    rng = np.random.default_rng(0)
    params = init_encoder_params(cfg, rng)
    return cfg, params, rng


def make_plan(strategy, lam, mix_layer=None):
    return MixPlan(anchor=0, partner=1, lam=lam, strategy=strategy, mix_layer=mix_layer)


def test_encode_output_shape(setup):
    cfg, params, rng = setup
    for n_real in (1, 4, cfg.max_len):
        ep = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=n_real)
        rep = encode(ep, params, cfg)
        assert isinstance(rep, DocumentRepresentation)
        assert rep.doc.shape == (4, cfg.hidden)
        assert all(rep.token_states[t].shape == (cfg.max_len, cfg.hidden) for t in DOC_TYPES)


def test_encode_deterministic(setup):
    cfg, params, rng = setup
    ep = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=5)
    a = encode(ep, params, cfg).doc.data
    b = encode(ep, params, cfg).doc.data
    np.testing.assert_array_equal(a, b)


def test_encode_all_pad_document_is_finite(setup):
    cfg, params, rng = setup
    ep = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=3)
    ep.ids["title"][:] = 0
    ep.mask["title"][:] = False
    rep = encode(ep, params, cfg)
    assert np.isfinite(rep.doc.data).all()


def test_word_layer_permutation_equivariance(setup):
    cfg, params, rng = setup
    w = Tensor(rng.standard_normal((cfg.max_len, cfg.hidden)))
    pad = np.zeros(cfg.max_len, dtype=bool)
    out = word_level_layer(w, pad, params, 0, cfg)
    perm = np.arange(cfg.max_len)
    perm[[0, 3]] = perm[[3, 0]]
    out_perm = word_level_layer(Tensor(w.data[perm]), pad, params, 0, cfg)
    np.testing.assert_allclose(out_perm.data, out.data[perm], atol=1e-12)


def test_word_layer_never_attends_to_pad(setup):
    cfg, params, rng = setup
    w = Tensor(rng.standard_normal((cfg.max_len, cfg.hidden)))
    pad = np.zeros(cfg.max_len, dtype=bool)
    pad[5:] = True
    sink = []
    word_level_layer(w, pad, params, 0, cfg, sink=sink)
    for attn in sink:
        assert np.all(attn[:, 5:] == 0.0)
        np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-9)


def test_fuse_zero_weights_returns_type_embedding(setup):
    cfg, params, rng = setup
    d_prev = Tensor(rng.standard_normal((1, cfg.hidden)))
    w = Tensor(rng.standard_normal((cfg.max_len, cfg.hidden)))
    fc_w = Tensor(np.zeros((cfg.max_len * cfg.hidden, cfg.hidden)))
    fc_b = Tensor(np.zeros(cfg.hidden))
    np.testing.assert_array_equal(fuse(d_prev, w, fc_w, fc_b).data, d_prev.data)


def test_fuse_identity_on_single_row():
    hidden = 6
    d_prev = Tensor(np.zeros((1, hidden)))
    w = Tensor(np.arange(hidden, dtype=float).reshape(1, hidden))
    fc_w = Tensor(np.eye(hidden))
    fc_b = Tensor(np.zeros(hidden))
    np.testing.assert_array_equal(fuse(d_prev, w, fc_w, fc_b).data, w.data)


def test_doc_layer_single_type(setup):
    cfg, params, rng = setup
    row = Tensor(rng.standard_normal((1, cfg.hidden)))
    out = document_level_layer(row, params, 0, cfg)
    assert out.shape == (1, cfg.hidden)
    assert np.isfinite(out.data).all()


def test_doc_layer_equal_rows_stay_equal(setup):
    cfg, params, rng = setup
    row = rng.standard_normal(cfg.hidden)
    fused = Tensor(np.tile(row, (4, 1)))
    out = document_level_layer(fused, params, 0, cfg)
    for i in range(1, 4):
        np.testing.assert_allclose(out.data[i], out.data[0], atol=1e-12)


def test_word_mixup_endpoints_reproduce_pure_encodings(setup):
    cfg, params, rng = setup
    a = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=5, rid="a")
    b = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=5, rid="b")
    pure_a = encode(a, params, cfg).doc.data
    pure_b = encode(b, params, cfg).doc.data
    at_one = encode(a, params, cfg, plan=make_plan("word_mixup", 1.0), partner=b).doc.data
    at_zero = encode(a, params, cfg, plan=make_plan("word_mixup", 0.0), partner=b).doc.data
    np.testing.assert_array_equal(at_one, pure_a)
    np.testing.assert_array_equal(at_zero, pure_b)


def test_word_cutmix_lambda_one_is_anchor(setup):
    cfg, params, rng = setup
    a = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=6, rid="a")
    b = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=6, rid="b")
    mixed = encode(a, params, cfg, plan=make_plan("word_cutmix", 1.0), partner=b).doc.data
    np.testing.assert_array_equal(mixed, encode(a, params, cfg).doc.data)


def test_manifold_mixup_runs_and_is_finite(setup):
    cfg, params, rng = setup
    a = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=4, rid="a")
    b = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=7, rid="b")
    rep = encode(a, params, cfg, plan=make_plan("manifold_mixup", 0.4, mix_layer=1), partner=b)
    assert np.isfinite(rep.doc.data).all()
    # endpoint check: lambda=1 keeps the anchor stream
    at_one = encode(a, params, cfg, plan=make_plan("manifold_mixup", 1.0, mix_layer=1), partner=b)
    np.testing.assert_allclose(at_one.doc.data, encode(a, params, cfg).doc.data, atol=1e-12)


def test_encode_gradient_via_type_embeddings(setup):
    cfg, params, rng = setup
    ep = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=6)
    readout = Tensor(rng.standard_normal((4, cfg.hidden)))

    def f(x):
        params["emb.type"] = x
        rep = encode(ep, params, cfg)
        return nm.sum_all(nm.mul(rep.doc, readout))

    x = Tensor(params["emb.type"].data.copy())
    assert nm.grad_check(f, x, h=1e-5) < 1e-3


def test_sinusoidal_encoding_values():
    pe = sinusoidal_encoding(10, 8)
    assert pe.shape == (10, 8)
    np.testing.assert_allclose(pe[0, 0::2], 0.0, atol=1e-12)
    np.testing.assert_allclose(pe[0, 1::2], 1.0, atol=1e-12)
    assert not np.allclose(pe[1], pe[2])


def test_attention_export_schema_and_mass(setup):
    cfg, params, rng = setup
    ep = make_encoded(rng, cfg.vocab_size, cfg.max_len, n_real=5)
    tokens = {t: [f"tok{i}" for i in range(5)] for t in DOC_TYPES}
    export = attention_export(ep, params, cfg, tokens=tokens)
    as_json = json.dumps(export)
    assert json.loads(as_json)["sample_id"] == ep.id
    for per_type in export["word_level"].values():
        for heads in per_type.values():
            for matrix in heads.values():
                m = np.array(matrix)
                np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-6)
                assert np.all(m[:, 5:] == 0.0)  # PAD columns
    for heads in export["doc_level"].values():
        for matrix in heads.values():
            np.testing.assert_allclose(np.array(matrix).sum(axis=1), 1.0, atol=1e-6)
    assert export["tokens"]["title"] == tokens["title"][: cfg.max_len]
