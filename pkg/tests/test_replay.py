"""Decoder snapshots, balanced counts, and synthetic sample generation."""

from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from clare.model import ClareModel, one_hot
from clare.replay import (
    balance_counts,
    generate_replay,
    load_snapshot,
    save_snapshot,
    take_snapshot,
)


def small_model(seed=0, class_no=3) -> ClareModel:
    return ClareModel(
        class_no=class_no, d_z=2, input_dim=6,
        enc_hidden=(8, 7), dec_hidden=(7, 8),
        rng=np.random.default_rng(seed),
    )


class TestSnapshot:
    def test_holds_only_decoder_tensors(self):
        snap = take_snapshot(small_model(), increment=0)
        assert sorted(snap.params) == [
            "dec_b1", "dec_b2", "dec_b3", "dec_w1", "dec_w2", "dec_w3",
        ]
        assert snap.class_no == 3
        assert snap.d_z == 2
        assert snap.output_dim == 6

    def test_survives_further_training_of_the_source(self):
        m = small_model(1)
        z = np.random.default_rng(2).standard_normal((4, 2))
        c = one_hot(np.array([0, 1, 2, 0]), 3)
        snap = take_snapshot(m, increment=0)
        before = snap.decode(z, c)
        # Wreck the live decoder; the frozen copy must not notice.
        for name in ("dec_w1", "dec_w2", "dec_w3"):
            m.tape.param(name)[...] = 0.0
        assert np.array_equal(snap.decode(z, c), before)
        assert not np.array_equal(m.decode(z, c), before)

    def test_round_trip_decodes_identically(self, tmp_path):
        snap = take_snapshot(small_model(3), increment=2)
        path = str(tmp_path / "decoder.clre")
        save_snapshot(snap, path)
        back = load_snapshot(path, increment=2)
        z = np.random.default_rng(4).standard_normal((5, 2))
        c = one_hot(np.array([0, 1, 2, 1, 0]), 3)
        assert np.array_equal(back.decode(z, c), snap.decode(z, c))
        assert back.class_no == snap.class_no
        assert back.d_z == snap.d_z

    def test_loading_a_full_model_checkpoint_fails_loudly(self, tmp_path):
        from clare.model import write_container

        path = str(tmp_path / "notadecoder.clre")
        write_container(path, 3, 2, {"enc_w1": np.zeros((2, 2))})
        with pytest.raises(ValueError, match="dec_w1"):
            load_snapshot(path)


class TestBalanceCounts:
    def test_median_of_two_new_classes(self):
        got = balance_counts([0, 1, 2], {3: 5000, 4: 7000})
        assert got == {0: 6000, 1: 6000, 2: 6000}

    def test_single_new_class(self):
        assert balance_counts([0], {1: 6000}) == {0: 6000}

    def test_half_up_rounding(self):
        # Median 150.5 rounds up, never banker's-rounds down.
        assert balance_counts([0], {1: 150, 2: 151}) == {0: 151}

    def test_no_learned_classes_means_no_replay(self):
        assert balance_counts([], {0: 100}) == {}

    def test_empty_new_counts_rejected(self):
        with pytest.raises(ValueError):
            balance_counts([0], {})

    def test_nonpositive_count_rejected(self):
        with pytest.raises(ValueError):
            balance_counts([0], {1: 0})


class TestGenerateReplay:
    def test_buffer_invariants(self):
        snap = take_snapshot(small_model(5), increment=1)
        counts = {0: 40, 2: 25}
        buf = generate_replay(snap, counts, seed=9)
        assert len(buf) == 65
        assert buf.images.shape == (65, 6)
        assert ((buf.images > 0) & (buf.images < 1)).all()
        assert Counter(buf.labels.tolist()) == counts
        # Classes come out sorted, so slices are contiguous.
        assert (np.diff(buf.labels) >= 0).all()

    def test_provenance(self):
        snap = take_snapshot(small_model(6), increment=4, trained=True)
        buf = generate_replay(snap, {0: 3}, seed=11)
        assert buf.provenance == {"increment": 4, "seed": 11, "trained": True}

    def test_deterministic_per_seed(self):
        snap = take_snapshot(small_model(7), increment=0)
        a = generate_replay(snap, {0: 30, 1: 20}, seed=42)
        b = generate_replay(snap, {0: 30, 1: 20}, seed=42)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)
        c = generate_replay(snap, {0: 30, 1: 20}, seed=43)
        assert not np.array_equal(a.images, c.images)

    def test_iteration_order_of_request_is_irrelevant(self):
        snap = take_snapshot(small_model(8), increment=0)
        fwd = generate_replay(snap, dict([(0, 10), (1, 15), (2, 5)]), seed=3)
        rev = generate_replay(snap, dict([(2, 5), (1, 15), (0, 10)]), seed=3)
        assert np.array_equal(fwd.images, rev.images)
        assert np.array_equal(fwd.labels, rev.labels)

    def test_per_class_stream_independent_of_other_requests(self):
        # Dropping class 1 from the request must not shift class 0's samples.
        snap = take_snapshot(small_model(9), increment=0)
        both = generate_replay(snap, {0: 12, 1: 12}, seed=5)
        solo = generate_replay(snap, {0: 12}, seed=5)
        assert np.array_equal(both.images[both.labels == 0], solo.images)

    def test_chunked_generation_spans_the_chunk_size(self):
        snap = take_snapshot(small_model(10), increment=0)
        buf = generate_replay(snap, {0: 1500}, seed=1)
        assert len(buf) == 1500
        assert buf.images.shape == (1500, 6)
        # One stream per class: the chunk boundary must not reseed.
        again = generate_replay(snap, {0: 1500}, seed=1)
        assert np.array_equal(buf.images, again.images)

    def test_empty_request_yields_empty_buffer(self):
        snap = take_snapshot(small_model(11), increment=0)
        buf = generate_replay(snap, {}, seed=0)
        assert len(buf) == 0
        assert buf.images.shape == (0, 6)

    def test_zero_count_class_is_skipped(self):
        snap = take_snapshot(small_model(12), increment=0)
        buf = generate_replay(snap, {0: 0, 1: 4}, seed=0)
        assert Counter(buf.labels.tolist()) == {1: 4}

    def test_unknown_class_rejected(self):
        snap = take_snapshot(small_model(13), increment=0)
        with pytest.raises(ValueError, match="outside"):
            generate_replay(snap, {3: 5}, seed=0)

    def test_negative_count_rejected(self):
        snap = take_snapshot(small_model(14), increment=0)
        with pytest.raises(ValueError):
            generate_replay(snap, {0: -1}, seed=0)

    @settings(max_examples=20, deadline=None)
    @given(
        counts=st.dictionaries(
            st.integers(0, 2), st.integers(1, 50), min_size=1, max_size=3
        ),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_label_multiset_always_matches_request(self, counts, seed):
        snap = take_snapshot(small_model(15), increment=0)
        buf = generate_replay(snap, counts, seed=seed)
        assert Counter(buf.labels.tolist()) == counts
        assert len(buf) == sum(counts.values())


class TestMergedRatios:
    def test_replay_share_balances_each_old_class(self):
        # Counts as the training loop assembles them: new data plus replay.
        snap = take_snapshot(small_model(16, class_no=5), increment=0)
        learned = [0, 1]
        new_counts = {2: 90, 3: 110, 4: 100}
        share = balance_counts(learned, new_counts)
        buf = generate_replay(snap, share, seed=2)
        merged = Counter(buf.labels.tolist())
        for cls, n in new_counts.items():
            merged[cls] += n
        assert merged == {0: 100, 1: 100, 2: 90, 3: 110, 4: 100}
