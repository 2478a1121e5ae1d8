"""Preprocessing protocol, subject splits, synthetic generator, manifests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krast import data as dp
from krast.errors import InputError, PreprocessError, SplitError


# ---------------------------------------------------------------------------
# frame sampling


def test_sample_frames_half_offset_rule():
    assert dp.sample_frames(10, 5) == [1, 3, 5, 7, 9]


def test_sample_frames_identity_when_equal():
    for t in (1, 4, 9):
        assert dp.sample_frames(t, t) == list(range(t))


def test_sample_frames_paper_sweep_values_accepted():
    for k in (8, 16, 32, 70, 86):
        idx = dp.sample_frames(100, k)
        assert len(idx) == k


def test_sample_frames_more_than_available_clamps():
    idx = dp.sample_frames(3, 7)
    assert len(idx) == 7
    assert max(idx) == 2 and min(idx) >= 0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 200), st.integers(1, 100))
def test_sample_frames_sorted_and_in_range(t, k):
    idx = dp.sample_frames(t, k)
    assert len(idx) == k
    assert all(0 <= i <= t - 1 for i in idx)
    assert idx == sorted(idx)


# ---------------------------------------------------------------------------
# cropping


def frame(w, h):
    return np.arange(h * w * 3, dtype=np.float32).reshape(h, w, 3) / (h * w * 3)


def test_crop_origin_clamps_low():
    assert dp.crop_origin(456, 256, 100, 100) == (0, 0)


def test_crop_origin_interior():
    assert dp.crop_origin(456, 256, 228, 128) == (116, 16)


def test_crop_identity_on_exact_window():
    f = frame(224, 224)
    out = dp.crop_person(f, (112, 112, 50, 50))
    assert np.array_equal(out, f)


def test_crop_window_always_inside_frame():
    f = frame(456, 256)
    for cx in (0, 10, 228, 455, 1000):
        for cy in (0, 128, 255, 900):
            out = dp.crop_person(f, (cx, cy, 10, 10))
            assert out.shape == (224, 224, 3)


def test_crop_rejects_small_frames():
    with pytest.raises(PreprocessError):
        dp.crop_person(frame(200, 256), (100, 100, 10, 10))


def test_crop_is_pure_slice():
    f = frame(456, 256)
    out = dp.crop_person(f, (228, 128, 10, 10))
    assert np.array_equal(out, f[16:240, 116:340])


# ---------------------------------------------------------------------------
# bilinear resize (external-data path)


def test_resize_worked_example_4x4_to_2x2():
    img = np.arange(16, dtype=np.float64).reshape(4, 4)
    out = dp.resize_bilinear(img, 2, 2)
    expect = np.array([[img[0:2, 0:2].mean(), img[0:2, 2:4].mean()],
                       [img[2:4, 0:2].mean(), img[2:4, 2:4].mean()]])
    assert np.allclose(out, expect)


def test_resize_identity():
    img = np.random.default_rng(0).random((5, 7, 3))
    assert np.allclose(dp.resize_bilinear(img, 5, 7), img)


# ---------------------------------------------------------------------------
# cross-subject split


def test_split_etri_protocol_roster_100():
    spec = dp.split_cross_subject(range(1, 101))
    assert len(spec.train_subject_ids) == 67
    assert len(spec.test_subject_ids) == 33
    assert spec.test_subject_ids == frozenset(range(3, 100, 3))
    assert 3 in spec.test_subject_ids and 4 in spec.train_subject_ids


def test_split_no_overlap_property():
    rng = np.random.default_rng(0)
    for _ in range(20):
        roster = set(rng.choice(100, size=rng.integers(5, 60), replace=False) + 1)
        if not any(s % 3 == 0 for s in roster) or all(s % 3 == 0 for s in roster):
            continue
        spec = dp.split_cross_subject(roster)
        assert not (spec.train_subject_ids & spec.test_subject_ids)
        assert spec.train_subject_ids | spec.test_subject_ids == roster


def test_split_degenerate_rosters_rejected():
    with pytest.raises(SplitError):
        dp.split_cross_subject({5})       # empty test side
    with pytest.raises(SplitError):
        dp.split_cross_subject({3, 6})    # empty train side


def test_split_unknown_protocol():
    with pytest.raises(InputError):
        dp.split_cross_subject({1, 3}, protocol="random")


# ---------------------------------------------------------------------------
# class stats


def test_class_stats_balanced_ratio_one():
    train = [{"class_id": c, "subject_id": 1} for c in (0, 1, 2)] * 4
    val = [{"class_id": c, "subject_id": 3} for c in (0, 1, 2)] * 2
    stats = dp.class_stats(train, val)
    assert stats["imbalance_ratio"] == 1.0
    assert stats["n_train"] == 12 and stats["n_val"] == 6


def test_class_stats_counts_sum_to_manifest_length():
    rng = np.random.default_rng(1)
    train = [{"class_id": int(rng.integers(4)), "subject_id": 1} for _ in range(37)]
    val = [{"class_id": int(rng.integers(4)), "subject_id": 3} for _ in range(11)]
    stats = dp.class_stats(train, val)
    assert sum(c["train"] for c in stats["classes"].values()) == 37
    assert sum(c["val"] for c in stats["classes"].values()) == 11


def test_class_stats_lists_empty_classes():
    train = [{"class_id": 0, "subject_id": 1}]
    stats = dp.class_stats(train, [], class_ids=[0, 1, 2])
    assert stats["classes"]["1"] == {"train": 0, "val": 0}
    assert stats["classes"]["2"] == {"train": 0, "val": 0}
    assert stats["imbalance_ratio"] is None


# ---------------------------------------------------------------------------
# synthetic generator


def test_generator_deterministic():
    a = dp.generate_synthetic(3, 4, 2, seed=9, n_frames=3)
    b = dp.generate_synthetic(3, 4, 2, seed=9, n_frames=3)
    for va, vb in zip(a.videos, b.videos):
        assert np.array_equal(va.frames, vb.frames)
        assert np.array_equal(va.bboxes, vb.bboxes)
    assert a.corpus.to_json() == b.corpus.to_json()


def test_generator_seed_changes_data():
    a = dp.generate_synthetic(2, 3, 1, seed=1, n_frames=2)
    b = dp.generate_synthetic(2, 3, 1, seed=2, n_frames=2)
    assert not np.array_equal(a.videos[0].frames, b.videos[0].frames)


def test_generator_manifest_cardinality():
    ds = dp.generate_synthetic(8, 10, 30, seed=0, n_frames=2)
    assert len(ds.videos) == 240
    assert len(ds.corpus) == 8


def test_generator_frames_in_unit_range_with_bboxes_inside():
    ds = dp.generate_synthetic(3, 4, 2, seed=5, n_frames=4, frame_hw=(256, 456))
    for v in ds.videos:
        assert v.frames.min() >= 0.0 and v.frames.max() <= 1.0
        h, w = v.frames.shape[1:3]
        assert ((v.bboxes[:, 0] >= 0) & (v.bboxes[:, 0] < w)).all()
        assert ((v.bboxes[:, 1] >= 0) & (v.bboxes[:, 1] < h)).all()


def test_generator_rejects_single_class():
    with pytest.raises(InputError):
        dp.generate_synthetic(1, 4, 2, seed=0)


def test_generator_corpus_names_generative_factors():
    ds = dp.generate_synthetic(4, 3, 1, seed=0, n_frames=2)
    for entry in ds.corpus:
        assert entry.s_text and entry.h_text and entry.d_text
        assert entry.keywords
        # the discriminative text carries the factor words
        assert any(k in entry.d_text for k in entry.keywords)


def test_oracle_perfect_at_difficulty_zero():
    ds = dp.generate_synthetic(4, 6, 6, seed=3, difficulty=0.0, n_frames=6)
    spec = dp.split_cross_subject({v.subject_id for v in ds.videos})
    train, test = [], []
    for v in ds.videos:
        item = (dp.preprocess_frames(v.frames, v.bboxes, 4), v.class_id)
        (train if v.subject_id in spec.train_subject_ids else test).append(item)
    assert dp.nearest_centroid_accuracy(train, test) == 1.0


# ---------------------------------------------------------------------------
# manifests


def test_raw_dataset_roundtrip(tmp_path):
    ds = dp.generate_synthetic(2, 3, 2, seed=4, n_frames=3)
    manifest = dp.write_raw_dataset(ds, str(tmp_path))
    rows = dp.read_manifest(manifest)
    assert len(rows) == 4
    for row, video in zip(rows, ds.videos):
        assert set(row) == {"tensor_path", "subject_id", "class_id",
                            "num_frames", "bboxes"}
        assert row["num_frames"] == 3
        from krast.tensorio import read_kvt
        back = read_kvt(str(tmp_path / row["tensor_path"]))
        assert np.array_equal(back, video.frames)


def test_preprocess_manifest_writes_sample_rows(tmp_path):
    ds = dp.generate_synthetic(2, 3, 2, seed=4, n_frames=5)
    manifest = dp.write_raw_dataset(ds, str(tmp_path / "raw"))
    out = dp.preprocess_manifest(manifest, 3, str(tmp_path / "prep"), jobs=2)
    rows = dp.read_manifest(out)
    assert len(rows) == 4
    for row in rows:
        assert "bboxes" not in row
        assert row["num_frames"] == 3
        from krast.tensorio import read_kvt
        arr = read_kvt(str(tmp_path / "prep" / row["tensor_path"]))
        assert arr.shape == (3, 224, 224, 3)
