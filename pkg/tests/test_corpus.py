import json

import numpy as np
import pytest

from capstage.corpus import (
    BOS,
    EOS,
    PAD,
    UNK,
    DEFAULT_DIMS,
    MODALITIES,
    SPECIAL_TOKENS,
    FeatureBundle,
    FeatureDataError,
    FeatureFormatError,
    SynthConfig,
    Vocabulary,
    build_vocabulary,
    encode_caption,
    feature_filename,
    load_dataset,
    load_feature_matrix,
    sample_frame_indices,
    save_feature_matrix,
    synth_dataset,
    tokenize,
)


# ---------------------------------------------------------------------------
# Frame index sampling
# ---------------------------------------------------------------------------

def test_frame_indices_identity():
    assert sample_frame_indices(28, 28) == list(range(28))


def test_frame_indices_stride():
    assert sample_frame_indices(56, 28) == list(range(0, 56, 2))


def test_frame_indices_short_video_cycles():
    got = sample_frame_indices(10, 28)
    assert got == [i % 10 for i in range(28)]


def test_frame_indices_floor_rule():
    # floor(i * n / k) for n >= k
    n, k = 45, 28
    assert sample_frame_indices(n, k) == [i * n // k for i in range(k)]


def test_frame_indices_bounds_and_order():
    for n in range(1, 80):
        got = sample_frame_indices(n, 28)
        assert len(got) == 28
        assert all(0 <= i < n for i in got)
        if n >= 28:
            assert got[0] == 0
            assert got == sorted(got)


def test_frame_indices_rejects_empty():
    with pytest.raises(ValueError):
        sample_frame_indices(0, 28)
    with pytest.raises(ValueError):
        sample_frame_indices(10, 0)


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

def test_tokenize_english_lowercases_and_strips_punct():
    assert tokenize("A man Runs.", "english") == ["a", "man", "runs"]


def test_tokenize_empty():
    assert tokenize("", "english") == []
    assert tokenize("   ", "english") == []
    assert tokenize("", "chinese") == []


def test_tokenize_english_punctuation_only():
    assert tokenize("!!! ,,, ...", "english") == []


def test_tokenize_chinese_per_character():
    assert tokenize("打篮球", "chinese") == ["打", "篮", "球"]


def test_tokenize_chinese_drops_ascii_punct_and_space():
    assert tokenize("打 篮球.", "chinese") == ["打", "篮", "球"]


def test_tokenize_unknown_track():
    with pytest.raises(ValueError):
        tokenize("a", "klingon")


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

def test_vocab_ids_by_descending_count():
    v = build_vocabulary([["a", "b", "b"], ["b", "a", "c"]])
    # counts: b=3, a=2, c=1
    assert v.token_to_id["b"] == 4
    assert v.token_to_id["a"] == 5
    assert v.token_to_id["c"] == 6


def test_vocab_spec_example():
    v = build_vocabulary([["a", "a"], ["a", "b"]])
    assert v.token_to_id["a"] == 4
    assert v.token_to_id["b"] == 5


def test_vocab_tie_breaks_lexicographic():
    v = build_vocabulary([["d", "c"], ["c", "d"]])
    assert v.token_to_id["c"] == 4
    assert v.token_to_id["d"] == 5


def test_vocab_min_count_filters():
    v = build_vocabulary([["a", "a"], ["b"]], min_count=2)
    assert "a" in v.token_to_id
    assert "b" not in v.token_to_id
    assert len(v) == len(SPECIAL_TOKENS) + 1


def test_vocab_specials_fixed():
    v = build_vocabulary([["x"]])
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)
    assert [v.id_to_token[i] for i in range(4)] == SPECIAL_TOKENS


def test_vocab_lookup_defaults_to_unk():
    v = build_vocabulary([["a"]])
    assert v.lookup("never-seen") == UNK
    assert v.lookup("a") == 4


def test_vocab_bijection():
    v = build_vocabulary([["a", "b", "c", "c"], ["d"]])
    assert sorted(v.token_to_id.values()) == list(range(len(v)))
    for tok, idx in v.token_to_id.items():
        assert v.id_to_token[idx] == tok


def test_vocab_roundtrip_via_id_table():
    v = build_vocabulary([["a", "b"], ["b"]])
    v2 = Vocabulary.from_id_to_token(v.id_to_token, v.min_count)
    assert v2.token_to_id == v.token_to_id


# ---------------------------------------------------------------------------
# Caption encoding
# ---------------------------------------------------------------------------

def test_encode_caption_basic():
    v = build_vocabulary([["a"]])
    assert encode_caption(["a"], v, 10) == [BOS, 4, EOS]


def test_encode_caption_unknown_token():
    v = build_vocabulary([["a"]])
    assert encode_caption(["zzz"], v, 10) == [BOS, UNK, EOS]


def test_encode_caption_truncates():
    v = build_vocabulary([["a"]])
    assert encode_caption(["a"] * 5, v, 4) == [BOS, 4, 4, EOS]


def test_encode_caption_brackets_always_present():
    v = build_vocabulary([["a", "b"]])
    for toks in ([], ["a"], ["a", "b"] * 10):
        ids = encode_caption(toks, v, 8)
        assert ids[0] == BOS and ids[-1] == EOS
        assert len(ids) <= 8


def test_encode_caption_rejects_tiny_max_len():
    v = build_vocabulary([["a"]])
    with pytest.raises(ValueError):
        encode_caption(["a"], v, 1)


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

def test_feature_roundtrip_bytes(tmp_path):
    rng = np.random.default_rng(0)
    mat = rng.standard_normal((28, 128)).astype("<f4")
    p = tmp_path / feature_filename("v0", "audio")
    save_feature_matrix(mat, p)
    assert p.read_bytes() == mat.tobytes()
    back = load_feature_matrix(p, "audio", 28, 128)
    assert np.array_equal(back, mat)


def test_feature_row_mismatch_names_modality(tmp_path):
    mat = np.zeros((27, 128), dtype="<f4")
    p = tmp_path / "v0.audio.f32"
    save_feature_matrix(mat, p)
    with pytest.raises(FeatureFormatError, match="audio"):
        load_feature_matrix(p, "audio", 28, 128)


def test_feature_non_finite_rejected(tmp_path):
    mat = np.zeros((4, 8), dtype="<f4")
    mat[1, 2] = np.nan
    p = tmp_path / "bad.f32"
    save_feature_matrix(mat, p)
    with pytest.raises(FeatureDataError):
        load_feature_matrix(p, "motion", 4, 8)


def test_bundle_frame_count_must_agree():
    bundle = FeatureBundle(
        appearance=np.zeros((28, 8)),
        motion=np.zeros((27, 4)),
        audio=np.zeros((28, 2)),
    )
    with pytest.raises(FeatureFormatError, match="motion"):
        bundle.validate()


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------

def test_synth_split_sizes(tiny_split):
    assert len(tiny_split.train) == 8
    assert len(tiny_split.val) == 3
    assert len(tiny_split.test) == 3


def test_synth_ids_disjoint(tiny_split):
    ids = [r.video_id for part in (tiny_split.train, tiny_split.val, tiny_split.test) for r in part]
    assert len(set(ids)) == len(ids)


def test_synth_feature_shapes(tiny_split, tiny_dataset_dir):
    rec = tiny_split.train[0]
    bundle = rec.load_features(tiny_dataset_dir)
    assert bundle.appearance.shape == (28, DEFAULT_DIMS["appearance"])
    assert bundle.motion.shape == (28, DEFAULT_DIMS["motion"])
    assert bundle.audio.shape == (28, DEFAULT_DIMS["audio"])


def test_synth_caption_counts_and_tracks(tiny_split):
    for rec in tiny_split.train:
        assert set(rec.captions) == {"english", "chinese"}
        assert len(rec.captions["english"]) == 10
        assert len(rec.captions["chinese"]) == 10


def test_synth_caption_grammar(tiny_split):
    for rec in tiny_split.train:
        for toks in rec.captions["english"]:
            # one subject, then one "<verb> the <noun>" clause per event
            assert toks[:2] == ["a", "person"]
            n_events = toks.count("the")
            assert 2 <= n_events <= 4
            connectors = [t for t in toks if t in ("then", "and")]
            assert len(connectors) == n_events - 1


def test_synth_topics_in_range(tiny_split):
    from conftest import TINY_SYNTH

    for rec in tiny_split.train + tiny_split.val + tiny_split.test:
        assert 0 <= rec.topic_id < TINY_SYNTH.n_topics


def test_synth_rerun_identical(tmp_path):
    cfg = SynthConfig(n_train=3, n_val=1, n_test=1, n_topics=2, seed=7)
    a, b = tmp_path / "a", tmp_path / "b"
    synth_dataset(cfg, a)
    synth_dataset(cfg, b)
    assert (a / "train.jsonl").read_bytes() == (b / "train.jsonl").read_bytes()
    rec = load_dataset(a).train[0]
    for m in MODALITIES:
        pa = a / rec.feature_paths[m]
        pb = b / rec.feature_paths[m]
        assert pa.read_bytes() == pb.read_bytes()


def test_synth_seed_changes_output(tmp_path):
    cfg = SynthConfig(n_train=3, n_val=1, n_test=1, n_topics=2, seed=7)
    a, b = tmp_path / "a", tmp_path / "b"
    synth_dataset(cfg, a)
    synth_dataset(cfg, b, seed=8)
    assert (a / "train.jsonl").read_bytes() != (b / "train.jsonl").read_bytes()


def test_synth_seed_override_recorded(tmp_path):
    cfg = SynthConfig(n_train=2, n_val=1, n_test=1, n_topics=2, seed=7)
    out = tmp_path / "d"
    synth_dataset(cfg, out, seed=9)
    stored = json.loads((out / "synth_config.json").read_text())
    assert stored["seed"] == 9


def test_synth_default_vocab_size(tmp_path):
    out = tmp_path / "d"
    synth_dataset(SynthConfig(seed=1), out)
    split = load_dataset(out)
    vocab = build_vocabulary(s for r in split.train for s in r.captions["english"])
    assert 20 <= len(vocab) <= 200


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_train=0).validate()
    with pytest.raises(ValueError):
        SynthConfig(min_events=3, max_events=2).validate()
    with pytest.raises(ValueError):
        SynthConfig(n_topics=0).validate()


def test_synth_config_json_roundtrip():
    cfg = SynthConfig(n_train=5, seed=3)
    back = SynthConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg
