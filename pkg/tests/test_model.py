from dataclasses import replace

import pytest
import torch

from capstage.corpus import BOS, EOS
from capstage.model import (
    EncodedVideo,
    ModelConfig,
    attend,
    decoder_step,
    encode,
    greedy_decode,
    greedy_decode_batch,
    init_params,
    initial_state,
    lstm_cell,
    param_shapes,
    sample_decode,
    sample_decode_batch,
    teacher_logits,
)

CFG = ModelConfig(
    vocab_size=12, n_topics=3,
    d_app=6, d_mot=5, d_aud=4,
    e_app=4, e_mot=4, e_aud=4,
    h_vis=6, h_aud=4,
    e_word=5, e_topic=3,
    h_att=6, h_lang=6, h_score=5,
    max_len=6,
)
T = 7


def make_params(seed=0):
    return init_params(CFG, seed)


def make_inputs(seed=0, batch=None):
    gen = torch.Generator().manual_seed(seed)
    shape = (T,) if batch is None else (batch, T)
    app = torch.randn(*shape, CFG.d_app, generator=gen)
    mot = torch.randn(*shape, CFG.d_mot, generator=gen)
    aud = torch.randn(*shape, CFG.d_aud, generator=gen)
    topic = 1 if batch is None else torch.randint(0, CFG.n_topics, (batch,), generator=gen)
    return app, mot, aud, topic


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def test_param_shapes_cover_init():
    shapes = param_shapes(CFG)
    params = make_params()
    assert set(params) == set(shapes)
    for name, shape in shapes.items():
        assert tuple(params[name].shape) == tuple(shape)


def test_init_deterministic_and_bounded():
    a, b = make_params(3), make_params(3)
    c = make_params(4)
    for name in a:
        assert torch.equal(a[name], b[name])
    assert any(not torch.equal(a[n], c[n]) for n in a)
    for name, t in a.items():
        if name.endswith("_b") or name.endswith("_v"):
            continue
        assert t.abs().max() <= 0.08 + 1e-7


def test_forget_gate_bias_is_one():
    params = make_params()
    for name in ("vis_lstm_b", "aud_lstm_b", "att_lstm_b", "lang_lstm_b"):
        b = params[name]
        h = b.shape[0] // 4
        assert torch.equal(b[h : 2 * h], torch.ones(h))
        assert torch.equal(b[:h], torch.zeros(h))
        assert torch.equal(b[2 * h :], torch.zeros(2 * h))


# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

def test_lstm_cell_zero_everything():
    d, h = 5, 4
    x = torch.zeros(d)
    w = torch.zeros(4 * h, d + h)
    b = torch.zeros(4 * h)
    h1, c1 = lstm_cell(x, torch.zeros(h), torch.zeros(h), w, b)
    assert torch.equal(h1, torch.zeros(h))
    assert torch.equal(c1, torch.zeros(h))


def test_lstm_cell_zero_params_halve_cell():
    # all gates sit at sigmoid(0) = 0.5 and g = tanh(0) = 0
    h = 4
    c0 = torch.tensor([1.0, -2.0, 0.5, 3.0])
    h1, c1 = lstm_cell(torch.zeros(3), torch.zeros(h), c0, torch.zeros(4 * h, 3 + h), torch.zeros(4 * h))
    assert torch.allclose(c1, 0.5 * c0)
    assert torch.allclose(h1, 0.5 * torch.tanh(0.5 * c0))


def test_lstm_cell_hidden_bounded():
    gen = torch.Generator().manual_seed(0)
    d, h = 6, 5
    w = 5.0 * torch.randn(4 * h, d + h, generator=gen)
    b = 5.0 * torch.randn(4 * h, generator=gen)
    hh = torch.zeros(h)
    cc = torch.zeros(h)
    for _ in range(20):
        hh, cc = lstm_cell(torch.randn(d, generator=gen), hh, cc, w, b)
    assert hh.abs().max() < 1.0


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

def test_encode_shapes():
    params = make_params()
    enc = encode(*make_inputs(), params, CFG)
    assert enc.vision_ctx.shape == (T, CFG.h_vis)
    assert enc.audio_ctx.shape == (T, CFG.h_aud)
    assert enc.topic_emb.shape == (CFG.e_topic,)


def test_encode_batched_matches_single():
    params = make_params()
    app, mot, aud, topics = make_inputs(batch=3)
    enc = encode(app, mot, aud, topics, params, CFG)
    for b in range(3):
        single = encode(app[b], mot[b], aud[b], int(topics[b]), params, CFG)
        assert torch.allclose(enc.vision_ctx[b], single.vision_ctx, atol=1e-6)
        assert torch.allclose(enc.audio_ctx[b], single.audio_ctx, atol=1e-6)
        assert torch.allclose(enc.topic_emb[b], single.topic_emb)


def test_encode_is_order_sensitive():
    params = make_params()
    app, mot, aud, topic = make_inputs()
    enc = encode(app, mot, aud, topic, params, CFG)
    perm = torch.arange(T - 1, -1, -1)
    enc_rev = encode(app[perm], mot[perm], aud[perm], topic, params, CFG)
    assert not torch.allclose(enc.vision_ctx, enc_rev.vision_ctx, atol=1e-4)


def test_encode_rejects_bad_topic():
    params = make_params()
    app, mot, aud, _ = make_inputs()
    with pytest.raises(ValueError):
        encode(app, mot, aud, CFG.n_topics, params, CFG)
    with pytest.raises(ValueError):
        encode(app, mot, aud, -1, params, CFG)


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------

def make_attention(seed, d=4, hq=3, hs=5):
    gen = torch.Generator().manual_seed(seed)
    return (
        torch.randn(hs, d, generator=gen),
        torch.randn(hs, hq, generator=gen),
        torch.randn(hs, generator=gen),
    )


def test_attend_weights_sum_to_one():
    w_c, w_q, v = make_attention(0)
    gen = torch.Generator().manual_seed(1)
    ctx = torch.randn(9, 4, generator=gen)
    q = torch.randn(3, generator=gen)
    weights, pooled = attend(q, ctx, w_c, w_q, v)
    assert weights.shape == (9,)
    assert pooled.shape == (4,)
    assert float(weights.sum()) == pytest.approx(1.0)
    assert (weights > 0).all()


def test_attend_uniform_over_identical_rows():
    w_c, w_q, v = make_attention(2)
    row = torch.tensor([0.3, -1.0, 0.7, 0.1])
    ctx = row.expand(5, 4)
    weights, pooled = attend(torch.tensor([1.0, 2.0, 3.0]), ctx, w_c, w_q, v)
    assert torch.allclose(weights, torch.full((5,), 0.2))
    assert torch.allclose(pooled, row)


def test_attend_pooled_is_convex_combination():
    w_c, w_q, v = make_attention(3)
    gen = torch.Generator().manual_seed(4)
    ctx = torch.randn(6, 4, generator=gen)
    weights, pooled = attend(torch.randn(3, generator=gen), ctx, w_c, w_q, v)
    assert torch.allclose(pooled, weights @ ctx, atol=1e-6)
    assert (pooled <= ctx.max(dim=0).values + 1e-6).all()
    assert (pooled >= ctx.min(dim=0).values - 1e-6).all()


def test_attend_rejects_empty_contexts():
    w_c, w_q, v = make_attention(5)
    with pytest.raises(ValueError):
        attend(torch.zeros(3), torch.zeros(0, 4), w_c, w_q, v)


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------

def test_decoder_step_logits_shape_and_state():
    params = make_params()
    enc = encode(*make_inputs(), params, CFG)
    state = initial_state(enc, CFG)
    assert int(state.prev_word) == BOS
    logits, nxt = decoder_step(state, enc, params, CFG)
    assert logits.shape == (CFG.vocab_size,)
    assert not torch.allclose(nxt.h_lang, state.h_lang)


def test_decoder_uses_audio_stream():
    params = make_params()
    enc = encode(*make_inputs(), params, CFG)
    muted = EncodedVideo(enc.vision_ctx, torch.zeros_like(enc.audio_ctx), enc.topic_emb)
    state = initial_state(enc, CFG)
    logits, _ = decoder_step(state, enc, params, CFG)
    logits_muted, _ = decoder_step(state, muted, params, CFG)
    assert not torch.allclose(logits, logits_muted, atol=1e-6)


def test_decoder_uses_topic():
    params = make_params()
    app, mot, aud, _ = make_inputs()
    enc0 = encode(app, mot, aud, 0, params, CFG)
    enc1 = encode(app, mot, aud, 1, params, CFG)
    l0, _ = decoder_step(initial_state(enc0, CFG), enc0, params, CFG)
    l1, _ = decoder_step(initial_state(enc1, CFG), enc1, params, CFG)
    assert not torch.allclose(l0, l1, atol=1e-6)


def test_teacher_logits_causal():
    params = make_params()
    enc = encode(*make_inputs(), params, CFG)
    ids_a = torch.tensor([BOS, 4, 5, 6, 7])
    ids_b = torch.tensor([BOS, 4, 5, 9, 10])  # differs from position 3 on
    la = teacher_logits(ids_a, enc, params, CFG)
    lb = teacher_logits(ids_b, enc, params, CFG)
    assert la.shape == (5, CFG.vocab_size)
    assert torch.allclose(la[:3], lb[:3], atol=1e-7)
    assert not torch.allclose(la[3], lb[3], atol=1e-6)


def test_teacher_logits_batched_matches_single():
    params = make_params()
    app, mot, aud, topics = make_inputs(batch=2)
    enc = encode(app, mot, aud, topics, params, CFG)
    ids = torch.tensor([[BOS, 4, 5], [BOS, 6, 7]])
    batched = teacher_logits(ids, enc, params, CFG)
    for b in range(2):
        single = teacher_logits(ids[b], enc.index(b), params, CFG)
        assert torch.allclose(batched[b], single, atol=1e-6)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def test_greedy_decode_deterministic_and_capped():
    params = make_params()
    enc = encode(*make_inputs(), params, CFG)
    a = greedy_decode(enc, params, CFG)
    b = greedy_decode(enc, params, CFG)
    assert a == b
    assert len(a) <= CFG.max_len
    assert all(0 <= w < CFG.vocab_size and w != EOS for w in a)


def test_greedy_batch_matches_single():
    params = make_params()
    app, mot, aud, topics = make_inputs(batch=4)
    enc = encode(app, mot, aud, topics, params, CFG)
    batched = greedy_decode_batch(enc, params, CFG)
    for b in range(4):
        assert batched[b] == greedy_decode(enc.index(b), params, CFG)


def test_sample_decode_logps_and_reproducibility():
    params = make_params()
    enc = encode(*make_inputs(), params, CFG)
    ids_a, logps_a = sample_decode(enc, params, CFG, torch.Generator().manual_seed(9))
    ids_b, logps_b = sample_decode(enc, params, CFG, torch.Generator().manual_seed(9))
    assert ids_a == ids_b
    assert torch.equal(logps_a, logps_b)
    assert (logps_a <= 0).all()
    # one logp per drawn token, including the EOS draw if it terminated early
    expected = len(ids_a) + (1 if len(ids_a) < CFG.max_len else 0)
    assert logps_a.shape[0] == expected


def test_sample_batch_shapes_and_grad():
    params = {k: v.clone().requires_grad_(True) for k, v in make_params().items()}
    app, mot, aud, topics = make_inputs(batch=3)
    enc = encode(app, mot, aud, topics, params, CFG)
    seqs, logp_sum = sample_decode_batch(enc, params, CFG, torch.Generator().manual_seed(1))
    assert len(seqs) == 3
    assert logp_sum.shape == (3,)
    assert logp_sum.requires_grad
    logp_sum.sum().backward()
    assert params["out_w"].grad is not None


def test_dominant_logits_make_sampling_greedy():
    # bias one word by +30 logits: sampling must agree with greedy decoding
    params = {k: torch.zeros_like(v) for k, v in make_params().items()}
    params["out_b"][5] = 30.0
    enc = EncodedVideo(torch.zeros(T, CFG.h_vis), torch.zeros(T, CFG.h_aud), torch.zeros(CFG.e_topic))
    cfg = replace(CFG, max_len=2)
    expect = greedy_decode(enc, params, cfg)
    assert expect == [5, 5]
    gen = torch.Generator().manual_seed(0)
    for _ in range(1000):
        ids, _ = sample_decode(enc, params, cfg, gen)
        assert ids == expect
