import collections
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eclab import corpora as C
from eclab import metrics as M
from eclab.errors import DataError
from eclab.game import GameConfig
from eclab.rng import Prng

from oracles import toposim_brute_force


def small_game_cfg(**kw):
    base = dict(vocab_size=64, seq_len=8, distractors=3, hidden_dim=16,
                feature_dim=12, batch_size=8, pool_size=16, seed=0)
    base.update(kw)
    return GameConfig(**base)


def random_corpus(n=50, vocab=32, seed=0, max_len=10):
    rng = np.random.default_rng(seed)
    msgs = [rng.integers(0, vocab, size=rng.integers(1, max_len)).tolist()
            for _ in range(n)]
    return C.Corpus(messages=msgs, vocab_size=vocab, provenance={"generator": "test"})


# -- file IO -------------------------------------------------------------------


def test_corpus_round_trip_is_byte_identical(tmp_path):
    corpus = random_corpus(n=1000, vocab=500, seed=1, max_len=16)
    p1 = tmp_path / "a.txt"
    p2 = tmp_path / "b.txt"
    C.write_corpus(str(p1), corpus)
    loaded = C.read_corpus(str(p1))
    assert loaded.vocab_size == corpus.vocab_size
    assert loaded.messages == corpus.messages
    C.write_corpus(str(p2), loaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_corpus_token_out_of_vocab_reports_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("12 0 7\n", encoding="utf-8")
    with pytest.raises(DataError, match=r"bad.txt:1.*12"):
        C.read_corpus(str(p), vocab_size=8)


def test_corpus_unparsable_token_reports_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# vocab_size=8\n1 2\n3 x\n", encoding="utf-8")
    with pytest.raises(DataError, match=r"bad.txt:3"):
        C.read_corpus(str(p))


def test_feature_round_trip_preserves_bits(tmp_path):
    rng = np.random.default_rng(2)
    rows = rng.standard_normal((37, 9)).astype(np.float32)
    rows[0, 0] = np.float32(1e-42)  # subnormal survives too
    fs = C.FeatureSet(rows=rows, provenance={"generator": "test"})
    path = tmp_path / "f.emf"
    C.write_features(str(path), fs)
    loaded = C.read_features(str(path))
    assert loaded.rows.tobytes() == rows.tobytes()
    path2 = tmp_path / "g.emf"
    C.write_features(str(path2), loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_feature_file_errors(tmp_path):
    p = tmp_path / "f.emf"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        C.read_features(str(p))
    fs = C.FeatureSet(rows=np.ones((3, 2), np.float32), provenance={"g": 1})
    C.write_features(str(p), fs)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(DataError, match="size"):
        C.read_features(str(p))


def test_vocab_round_trip(tmp_path):
    vocab = ["a", "the", "attr0_1", "attr3_5"]
    p = tmp_path / "v.txt"
    C.write_vocab(str(p), vocab)
    assert C.read_vocab(str(p)) == vocab


# -- permute ---------------------------------------------------------------------


def test_permute_keeps_length_one_messages():
    corpus = C.Corpus(messages=[[3], [5], [7]], vocab_size=8,
                      provenance={"generator": "test"})
    out = C.permute_corpus(corpus, Prng(0, "perm"))
    assert out.messages == corpus.messages


def test_permute_preserves_per_line_multiset_and_global_counts():
    corpus = random_corpus(n=200, vocab=20, seed=3)
    out = C.permute_corpus(corpus, Prng(1, "perm"))
    for before, after in zip(corpus.messages, out.messages):
        assert sorted(before) == sorted(after)
    before_counts = collections.Counter(t for m in corpus.messages for t in m)
    after_counts = collections.Counter(t for m in out.messages for t in m)
    assert before_counts == after_counts
    assert any(a != b for a, b in zip(corpus.messages, out.messages))


@given(st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=6), min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_permute_property_global_unigrams_exact(messages):
    corpus = C.Corpus(messages=messages, vocab_size=10, provenance={"generator": "h"})
    out = C.permute_corpus(corpus, Prng(2, "perm"))
    assert collections.Counter(t for m in corpus.messages for t in m) == \
        collections.Counter(t for m in out.messages for t in m)


# -- random inputs ------------------------------------------------------------------


def test_random_inputs_zero_std_returns_mean_rows():
    stats = C.FeatureStats(mean=np.array([1.0, -2.0, 3.0]), std=np.zeros(3))
    fs = C.random_inputs(stats, 10, Prng(0, "ri"))
    np.testing.assert_allclose(fs.rows, np.tile(stats.mean, (10, 1)), atol=1e-7)


def test_random_inputs_deterministic_and_moment_matched():
    rng = np.random.default_rng(4)
    base = C.FeatureSet(rows=rng.standard_normal((500, 6)).astype(np.float32) * 2 + 1,
                        provenance={"g": 1})
    stats = C.feature_stats(base)
    a = C.random_inputs(stats, 20_000, Prng(5, "ri"))
    b = C.random_inputs(stats, 20_000, Prng(5, "ri"))
    assert a.rows.tobytes() == b.rows.tobytes()
    se_mean = stats.std / math.sqrt(20_000)
    assert np.all(np.abs(a.rows.mean(axis=0) - stats.mean) < 3 * se_mean + 1e-6)
    se_std = stats.std / math.sqrt(2 * 20_000)
    assert np.all(np.abs(a.rows.std(axis=0) - stats.std) < 3 * se_std + 1e-6)
    with pytest.raises(DataError):
        C.random_inputs(stats, 0, Prng(0, "x"))


# -- paren-zipf ----------------------------------------------------------------------


def test_paren_zipf_rejects_bad_args():
    with pytest.raises(DataError):
        C.gen_paren_zipf(10, 101, prng=Prng(0))
    with pytest.raises(DataError):
        C.gen_paren_zipf(0, 100, prng=Prng(0))
    with pytest.raises(DataError):
        C.gen_paren_zipf(10, 100, open_prob=1.0, prng=Prng(0))


def test_paren_zipf_lines_balance_and_counts_are_even():
    corpus = C.gen_paren_zipf(50, 4096, prng=Prng(7), line_length=128)
    assert corpus.token_count() == 4096
    for line in corpus.messages:
        assert len(line) == 128
        assert C.verify_balanced(line)
        counts = collections.Counter(line)
        assert all(c % 2 == 0 for c in counts.values())


def test_paren_zipf_partial_last_line_still_balances():
    corpus = C.gen_paren_zipf(20, 300, prng=Prng(8), line_length=128)
    assert [len(m) for m in corpus.messages] == [128, 128, 44]
    assert all(C.verify_balanced(m) for m in corpus.messages)


def test_paren_zipf_unigrams_near_zipf():
    corpus = C.gen_paren_zipf(200, 100_000, s=1.0, prng=Prng(9))
    rep = M.unigram_stats(corpus.messages, vocab_size=200)
    assert M.kl_to_zipf(rep.counts, s=1.0) < 0.05
    ideal = M.zipf_entropy(200, 1.0)
    assert abs(rep.entropy - ideal) < 0.15


def test_verify_balanced_rejects_unbalanced():
    assert C.verify_balanced([1, 2, 2, 1])
    assert C.verify_balanced([])
    assert not C.verify_balanced([1, 2, 1, 2])
    assert not C.verify_balanced([1])


# -- synthetic world --------------------------------------------------------------------


def test_world_one_hot_geometry():
    spec = C.SyntheticWorldSpec(attributes=2, values=3, noise=0.0, seed=0)
    feats, caps, vocab = C.synthetic_world(spec)
    assert feats.rows.shape == (9, 6)
    # objects (0,0) and (0,1) differ in exactly one attribute
    d = np.linalg.norm(feats.rows[0] - feats.rows[1])
    assert d == pytest.approx(math.sqrt(2), abs=1e-6)


def test_world_identical_tuples_caption_identically():
    spec = C.SyntheticWorldSpec(attributes=3, values=2, noise=0.1, seed=1,
                                n_objects=200,
                                templates=(("a", "ATTRS", "thing"),
                                           ("the", "ATTRS", "here")))
    feats, caps, vocab = C.synthetic_world(spec)
    seen = {}
    blocks = feats.rows.round().astype(int)  # de-noise back to one-hots
    for row, cap in zip(map(tuple, blocks.tolist()), caps.captions):
        if row in seen:
            assert seen[row] == cap
        seen[row] = cap


def test_world_caption_vocab_covers_all_content_words():
    spec = C.SyntheticWorldSpec(attributes=2, values=4, noise=0.0, seed=2)
    _, caps, vocab = C.synthetic_world(spec)
    assert len(vocab) == len(set(vocab))
    assert sum(1 for w in vocab if w.startswith("attr")) == 8
    used = {t for cap in caps.captions for t in cap}
    content_ids = {i for i, w in enumerate(vocab) if w.startswith("attr")}
    assert content_ids <= used


def test_world_ground_truth_captions_have_high_toposim():
    spec = C.SyntheticWorldSpec(attributes=3, values=3, noise=0.0, seed=3)
    feats, caps, _ = C.synthetic_world(spec)  # 27 objects
    report = M.topographic_similarity(caps.captions, feats.rows, mode="full")
    assert report.rho is not None and report.rho > 0.5
    brute = toposim_brute_force([c[:4] for c in caps.captions][:12], feats.rows[:12])
    got = M.topographic_similarity([c[:4] for c in caps.captions][:12],
                                   feats.rows[:12], mode="full")
    assert got.rho == pytest.approx(brute, abs=1e-12)


def test_world_is_pure_function_of_spec():
    spec = C.SyntheticWorldSpec(attributes=3, values=4, noise=0.05, seed=9,
                                n_objects=100)
    f1, c1, v1 = C.synthetic_world(spec)
    f2, c2, v2 = C.synthetic_world(spec)
    assert f1.rows.tobytes() == f2.rows.tobytes()
    assert c1.captions == c2.captions and v1 == v2


# -- emergent corpora ----------------------------------------------------------------------


def make_untrained_checkpoint(tmp_path, cfg):
    from eclab.game import config_echo, init_game
    from eclab.checkpoint import save_checkpoint

    params = init_game(cfg, Prng(cfg.seed).child("game-init"))
    path = tmp_path / "ck"
    save_checkpoint(str(path), params, step=0, config=config_echo(cfg))
    return str(path)


def test_generate_corpus_greedy_is_reproducible(tmp_path):
    cfg = small_game_cfg()
    ck = make_untrained_checkpoint(tmp_path, cfg)
    feats = C.FeatureSet(rows=Prng(0, "f").normal((40, cfg.feature_dim)).astype(np.float32),
                         provenance={"g": 1})
    c1 = C.generate_corpus(ck, feats, decode="greedy")
    c2 = C.generate_corpus(ck, feats, decode="greedy")
    assert c1.messages == c2.messages
    assert len(c1.messages) == 40
    assert c1.vocab_size == cfg.vocab_size
    assert c1.provenance["decode"] == "greedy"


def test_generate_corpus_dimension_mismatch(tmp_path):
    cfg = small_game_cfg()
    ck = make_untrained_checkpoint(tmp_path, cfg)
    feats = C.FeatureSet(rows=np.ones((5, cfg.feature_dim + 1), np.float32),
                         provenance={"g": 1})
    with pytest.raises(DataError, match="dim"):
        C.generate_corpus(ck, feats)


def test_truncate_at_first_null():
    assert C.truncate_at_first_null([5, 3, 0, 7]) == [5, 3]
    assert C.truncate_at_first_null([0, 1, 2]) == []
    assert C.truncate_at_first_null([4, 5]) == [4, 5]


def test_generate_corpus_truncation_flag(tmp_path):
    cfg = small_game_cfg()
    ck = make_untrained_checkpoint(tmp_path, cfg)
    feats = C.FeatureSet(rows=Prng(1, "f").normal((300, cfg.feature_dim)).astype(np.float32),
                         provenance={"g": 1})
    full = C.generate_corpus(ck, feats, decode="sample", prng=Prng(2, "d"))
    cut = C.generate_corpus(ck, feats, decode="sample", prng=Prng(2, "d"),
                            truncate_at_zero=True)
    assert any(0 in m for m in full.messages)  # untrained speaker emits nulls
    for f, c in zip(full.messages, cut.messages):
        assert c == C.truncate_at_first_null(f)


def test_random_speaker_corpus_seeded_and_wide_coverage():
    cfg = small_game_cfg(vocab_size=64, hidden_dim=64, feature_dim=24)
    feats = C.FeatureSet(rows=Prng(3, "f").normal((3000, cfg.feature_dim)).astype(np.float32),
                         provenance={"g": 1})
    c1 = C.random_speaker_corpus(cfg, feats, Prng(4))
    c2 = C.random_speaker_corpus(cfg, feats, Prng(4))
    assert c1.messages == c2.messages
    used = {t for m in c1.messages for t in m}
    emittable = cfg.vocab_size - 1  # id 1 never emitted
    assert len(used) / emittable >= 0.9
