import filecmp

import numpy as np
import pytest

from stepwise.cohort import impute_cohort, load_study_dir
from stepwise.experiments import association_stats
from stepwise.synth import DEFAULT_HOURLY_PROFILE, SynthConfig, generate_cohort, write_cohort


def test_profile_peaks_midday_and_bottoms_overnight():
    prof = np.asarray(DEFAULT_HOURLY_PROFILE)
    order = np.argsort(prof)
    assert set(order[-5:]) == {11, 12, 13, 14, 15}
    assert set(order[:5]) == {0, 1, 2, 3, 4}
    assert prof.sum() == pytest.approx(1.0)


def test_same_seed_gives_identical_files(tmp_path):
    cfg = SynthConfig(n_participants=25, seed=9)
    write_cohort(generate_cohort(cfg), tmp_path / "a")
    write_cohort(generate_cohort(cfg), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert len(cmp.left_list) == 4
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for name in cmp.common_files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seeds_differ():
    a = generate_cohort(SynthConfig(n_participants=5, seed=1))
    b = generate_cohort(SynthConfig(n_participants=5, seed=2))
    assert not np.array_equal(a.participants[0].grids[0], b.participants[0].grids[0])


def test_adding_participants_keeps_existing_draws():
    small = generate_cohort(SynthConfig(n_participants=10, seed=4))
    big = generate_cohort(SynthConfig(n_participants=20, seed=4))
    for p, q in zip(small.participants, big.participants):
        assert p.demographics == q.demographics
        # day order and outcomes depend on the cohort mean, the raw draws do not
        for g, h in zip(p.grids, q.grids):
            assert np.array_equal(np.sort(g, axis=0), np.sort(h, axis=0))


def test_conditional_drop_rate_matches_parameter():
    cohort = generate_cohort(SynthConfig(n_participants=10_000, seed=0))
    stats = association_stats(impute_cohort(cohort.series(6)), 0.05)
    assert stats.p_drop_given_above == pytest.approx(0.73, abs=0.02)
    assert stats.p_drop_given_below == pytest.approx(0.30, abs=0.02)


def test_files_round_trip_without_drops(tmp_path):
    cfg = SynthConfig(n_participants=12, seed=5, missing_rate=0.0, dropout_rate=0.0)
    cohort = generate_cohort(cfg)
    write_cohort(cohort, tmp_path)
    loaded = load_study_dir(tmp_path)
    assert loaded.report.n_dropped == 0
    assert loaded.report.skipped_events == 0
    assert len(loaded) == 2 * 12
    for s, t in zip(loaded.series, cohort.series(6)):
        assert s.key == t.key
        assert not np.isnan(s.counts).any()
        np.testing.assert_array_equal(s.counts, t.counts)
        assert (s.bmi_start, s.bmi_end) == (t.bmi_start, t.bmi_end)


def test_attrition_removes_second_period(tmp_path):
    cohort = generate_cohort(SynthConfig(n_participants=30, seed=2))
    write_cohort(cohort, tmp_path)
    loaded = load_study_dir(tmp_path)
    left = [p for p in cohort.participants if "closeout" not in p.bmi]
    assert left
    assert sorted(loaded.report.dropped["missing_milestone"]) == sorted(
        f"{p.participant_id}/second" for p in left)
    assert len(loaded) == 30 + 30 - len(left)


def test_loaded_files_match_in_memory_series_with_gaps(tmp_path, small_cohort):
    write_cohort(small_cohort, tmp_path, m_slots=4)
    loaded = load_study_dir(tmp_path)
    mem = small_cohort.series(4)
    assert [s.key for s in loaded] == [s.key for s in mem]
    for s, t in zip(loaded, mem):
        np.testing.assert_array_equal(s.counts, t.counts)


def test_age_split_is_near_even():
    cohort = generate_cohort(SynthConfig(n_participants=3000, seed=6))
    ages = np.array([p.demographics.age for p in cohort.participants])
    assert (ages > 50).mean() == pytest.approx(0.498, abs=0.03)


@pytest.mark.parametrize("kwargs", [
    {"n_participants": 1}, {"p_drop_active": 1.5}, {"m": 5}, {"missing_rate": -0.1},
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        generate_cohort(SynthConfig(**kwargs))
