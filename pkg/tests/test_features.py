import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stepwise.cohort import impute_cohort, load_study_dir
from stepwise.features import (
    EXTRACTED_NAMES,
    CohortStats,
    ParticipantStats,
    build_sequences,
    extract_window_features,
    feature_columns,
    feature_names,
    partition_windows,
    write_feature_dump,
)
from stepwise.synth import VOCABULARIES, write_cohort

import oracle

DEMO = np.arange(8, dtype=float)


@pytest.mark.parametrize("m,length", [(4, 23), (6, 25), (12, 31)])
def test_vector_length(m, length):
    grid = np.ones((7, m))
    ps = ParticipantStats.from_grid(grid)
    cs = CohortStats(7.0, 7.0, 1.0)
    assert extract_window_features(grid, ps, cs, DEMO).vector.shape == (length,)
    assert len(feature_names(m)) == length


@pytest.mark.parametrize("n,k,count", [(90, 7, 12), (90, 3, 30), (90, 30, 3), (90, 90, 1)])
def test_partition(n, k, count):
    assert partition_windows(n, k).window_count == count


@pytest.mark.parametrize("k", [0, 91])
def test_partition_rejects_bad_k(k):
    with pytest.raises(ValueError):
        partition_windows(90, k)


def test_constant_grid_arithmetic():
    grid = np.full((7, 6), 100.0)
    ps = ParticipantStats.from_grid(grid)
    below = CohortStats(500.0, 500.0, 250.0)
    above = CohortStats(700.0, 700.0, 400.0)
    f = extract_window_features(grid, ps, below, DEMO)
    named = dict(zip(EXTRACTED_NAMES, f.extracted))
    np.testing.assert_array_equal(f.slot_avgs, 100.0)
    assert named["daily_avg_steps"] == 600
    assert named["daily_max_steps"] == named["daily_min_steps"] == 600
    assert named["weekly_max_steps"] == named["weekly_min_steps"] == 4200
    assert named["total_steps"] == 4200
    assert named["active_days"] == 7
    # a day equal to the own mean is not above it
    assert named["days_above_own_daily_mean"] == 0
    assert named["days_above_own_weekly_mean"] == 0
    assert named["days_above_cohort_daily_mean"] == 7
    assert named["days_above_cohort_weekly_mean"] == 7
    g = dict(zip(EXTRACTED_NAMES, extract_window_features(grid, ps, above, DEMO).extracted))
    assert g["active_days"] == g["days_above_cohort_daily_mean"] == 0
    assert g["days_above_cohort_weekly_mean"] == 0
    np.testing.assert_array_equal(f.demographics_encoded, DEMO)


def test_short_window_weekly_values_fall_back_to_total():
    grid = np.arange(18, dtype=float).reshape(3, 6)
    f = extract_window_features(grid, ParticipantStats.from_grid(grid), CohortStats(1, 1, 1), DEMO)
    named = dict(zip(EXTRACTED_NAMES, f.extracted))
    assert named["weekly_max_steps"] == named["weekly_min_steps"] == grid.sum()


def test_absent_cells_rejected():
    grid = np.ones((7, 6))
    grid[2, 2] = np.nan
    with pytest.raises(ValueError, match="impute"):
        extract_window_features(grid, ParticipantStats(1, 7), CohortStats(1, 1, 1), DEMO)


def test_feature_sets():
    assert list(feature_columns(6, "slots")) == list(range(6))
    assert list(feature_columns(6, "slots+demo")) == list(range(6)) + list(range(17, 25))
    assert list(feature_columns(6, "das")) == [6]
    assert feature_names(6)[6] == "daily_avg_steps"
    with pytest.raises(ValueError):
        feature_columns(6, "bogus")


window_strategy = arrays(np.float64, st.tuples(st.integers(1, 15), st.sampled_from([4, 6, 12])),
                         elements=st.floats(0, 5000))


@settings(max_examples=80, deadline=None)
@given(window_strategy, st.floats(0, 4000), st.floats(0, 4000), st.floats(0, 2000))
def test_window_invariants(grid, cd, cw, low):
    k, m = grid.shape
    f = extract_window_features(grid, ParticipantStats.from_grid(grid), CohortStats(cd, cw, low), DEMO)
    v = f.vector
    assert v.shape == (m + 19,)
    avg, dmax, dmin, _, _, total = v[m:m + 6]
    tol = 1e-9 * max(1.0, dmax)
    assert dmin - tol <= avg <= dmax + tol
    assert total == pytest.approx(k * avg, rel=1e-12, abs=1e-9)
    counts = v[m + 6:m + 11]
    assert ((counts >= 0) & (counts <= k) & (counts == np.round(counts))).all()


def test_sequences_shape_and_flat_equivalence(small_series):
    data = build_sequences(small_series, 7, 0.05, VOCABULARIES)
    assert data.X.shape == (len(small_series), 12, 25)
    flat = build_sequences(small_series, 90, 0.05, VOCABULARIES)
    assert flat.steps == 1
    assert flat.flat().shape == (len(small_series), 25)


def test_participant_order_does_not_matter(small_series):
    a = build_sequences(small_series, 7, 0.05, VOCABULARIES)
    perm = np.random.default_rng(0).permutation(len(small_series))
    b = build_sequences([small_series[i] for i in perm], 7, 0.05, VOCABULARIES)
    pos = {k: i for i, k in enumerate(b.keys)}
    for i, key in enumerate(a.keys):
        np.testing.assert_allclose(a.X[i], b.X[pos[key]], rtol=1e-12, atol=1e-9)


def test_feature_dump_is_stable(tmp_path, small_series):
    data = build_sequences(small_series, 7, 0.05, VOCABULARIES)
    write_feature_dump(data, tmp_path / "a.csv")
    write_feature_dump(build_sequences(small_series, 7, 0.05, VOCABULARIES), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header == ["participant_id", "period", "window", *feature_names(6), "label"]


@pytest.fixture(scope="module")
def written_cohort(tmp_path_factory, small_cohort):
    d = tmp_path_factory.mktemp("study")
    write_cohort(small_cohort, d)
    return d


@pytest.mark.parametrize("m,k", [(6, 7), (4, 30), (12, 3)])
def test_features_match_event_level_oracle(written_cohort, m, k):
    series = impute_cohort(load_study_dir(written_cohort, m=m).series)
    data = build_sequences(series, k, 0.05, VOCABULARIES)
    ref = oracle.impute_all(oracle.read_raw(written_cohort, m), m)
    assert sorted(ref) == sorted(data.keys)
    cstats = oracle.cohort_stats(list(ref.values()))
    rng = np.random.default_rng(m * 100 + k)
    for _ in range(30):
        i = int(rng.integers(len(data)))
        w = int(rng.integers(data.steps))
        expected = oracle.window_features(ref[data.keys[i]], w, k, cstats)
        np.testing.assert_allclose(data.X[i, w, :m + 11], expected, rtol=0, atol=1e-9 * max(
            1.0, max(abs(v) for v in expected)))
