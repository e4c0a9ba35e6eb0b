import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpipoison.detector.windows import (
    NormalizationStats,
    chronological_split,
    denormalize,
    fit_normalization,
    fit_normalization_windows,
    make_windows,
    normalize,
)
from kpipoison.errors import ConfigError
from kpipoison.records import Dataset
from oracles import brute_force_windows


def _one_ue(n=100, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(np.arange(n), np.ones(n, dtype=np.int64), np.abs(rng.normal(size=(n, 6))), check=False)


def test_window_count():
    assert len(make_windows(_one_ue(100), None, 20)) == 81


def test_length_one_windows_are_records():
    ds = _one_ue(30)
    labels = (np.arange(30) % 4 == 0).astype(np.int8)
    w = make_windows(ds, labels, 1)
    np.testing.assert_array_equal(w.x[:, 0, :], ds.features)
    np.testing.assert_array_equal(w.labels, labels)


def test_straddling_window_is_poisoned():
    ds = _one_ue(30)
    labels = np.zeros(30, dtype=np.int8)
    labels[10:15] = 1
    w = make_windows(ds, labels, 5)
    # windows starting 6..14 touch the interval
    np.testing.assert_array_equal(np.flatnonzero(w.labels), np.arange(6, 15))


def test_short_ue_contributes_nothing():
    with pytest.raises(ConfigError):
        make_windows(_one_ue(5), None, 0)
    assert len(make_windows(_one_ue(5), None, 6)) == 0


def test_gap_breaks_windows():
    ts = np.array([0, 1, 2, 5, 6, 7, 8])
    ds = Dataset(ts, np.ones(7, dtype=np.int64), np.ones((7, 6)), check=False)
    w = make_windows(ds, None, 3)
    assert list(w.start_t) == [0, 5, 6]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 25), st.integers(1, 6), st.integers(0, 10_000))
def test_matches_brute_force(n_ues, T, L, seed):
    rng = np.random.default_rng(seed)
    ts = np.repeat(np.arange(T), n_ues)
    ue = np.tile(np.arange(1, n_ues + 1), T)
    keep = rng.random(len(ts)) > 0.1  # random gaps
    ts, ue = ts[keep], ue[keep]
    feats = rng.random((len(ts), 6))
    labels = (rng.random(len(ts)) < 0.2).astype(np.int8)
    ds = Dataset(ts, ue, feats, check=False)
    w = make_windows(ds, labels, L)
    x, y, u, s = brute_force_windows(ts, ue, feats, labels, L)
    order = np.lexsort((w.start_t, w.ue_ids))
    np.testing.assert_array_equal(w.x[order], x)
    np.testing.assert_array_equal(w.labels[order], y)
    np.testing.assert_array_equal(w.ue_ids[order], u)
    np.testing.assert_array_equal(w.start_t[order], s)


def test_constant_feature_normalises_to_zero():
    x = np.ones((50, 6))
    x[:, 0] = np.arange(50)
    st_ = fit_normalization(x)
    z = normalize(x, st_)
    np.testing.assert_array_equal(z[:, 1:], 0.0)


def test_normalize_inverse(rng):
    x = rng.normal(size=(20, 4, 6)) * 100
    st_ = fit_normalization(rng.normal(size=(100, 6)) * 50 + 3)
    np.testing.assert_allclose(denormalize(normalize(x, st_), st_), x, atol=1e-9)


def test_benign_training_mean_near_zero(small_dataset):
    st_ = fit_normalization(small_dataset.features)
    assert np.all(np.abs(normalize(small_dataset.features, st_).mean(axis=0)) < 1e-6)


def test_window_stats_count_each_record_once(small_dataset):
    w = make_windows(small_dataset, None, 5)
    a = fit_normalization_windows(w)
    b = fit_normalization(small_dataset.features)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12)
    np.testing.assert_allclose(a.std, b.std, rtol=1e-12)


def test_std_floor():
    s = NormalizationStats(np.zeros(6), np.zeros(6))
    assert np.all(s.std > 0)


def test_chronological_split(small_dataset):
    tr, te = chronological_split(small_dataset, 0.7)
    assert not np.any(tr & te) and np.all(tr | te)
    for ue in small_dataset.ue_ids():
        rows = small_dataset.ue_id == ue
        assert small_dataset.timestamp[rows & tr].max() < small_dataset.timestamp[rows & te].min()
        assert (rows & tr).sum() == int(0.7 * rows.sum())
