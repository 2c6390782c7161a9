import csv

import numpy as np
import pytest

from wasnsep.metrics import (ScoreRow, aggregate, score_scenario, si_sdr,
                             summary_table, write_aggregate_csv, write_rows_csv)


class TestSiSdr:
    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        t = rng.standard_normal(8000)
        e = t + 0.1 * rng.standard_normal(8000)
        base = si_sdr(e, t)
        for g in (0.01, 3.0, 1000.0):
            assert si_sdr(g * e, t) == pytest.approx(base, abs=1e-9)

    def test_orthogonal_noise_analytic(self):
        # est = t + n with n orthogonal to t and ||n||^2 = ||t||^2 / 10
        rng = np.random.default_rng(1)
        t = rng.standard_normal(16000)
        n = rng.standard_normal(16000)
        n -= t * (np.dot(n, t) / np.dot(t, t))
        n *= np.sqrt(np.dot(t, t) / (10.0 * np.dot(n, n)))
        assert si_sdr(t + n, t) == pytest.approx(10.0, abs=1e-6)

    def test_perfect_reconstruction_caps_at_100(self):
        t = np.sin(np.arange(4000) * 0.01)
        assert si_sdr(t, t) == 100.0
        assert si_sdr(2.5 * t, t) == 100.0

    def test_orthogonal_estimate_caps_at_minus_100(self):
        t = np.zeros(1000)
        t[0] = 1.0
        e = np.zeros(1000)
        e[1] = 1.0
        assert si_sdr(e, t) == -100.0

    def test_sign_flip_is_perfect(self):
        # projection absorbs the sign, so an inverted copy is still exact
        t = np.random.default_rng(2).standard_normal(3000)
        assert si_sdr(-t, t) == 100.0

    def test_errors(self):
        with pytest.raises(ValueError):
            si_sdr(np.zeros(10), np.zeros(10))
        with pytest.raises(ValueError):
            si_sdr(np.ones(10), np.ones(11))
        with pytest.raises(ValueError):
            si_sdr(np.ones((2, 5)), np.ones((2, 5)))


def tiny_scene(n=4000, seed=3):
    """Two near-orthogonal sources at two mics, identity image model."""
    rng = np.random.default_rng(seed)
    src = rng.standard_normal((2, n))
    targets = np.stack([np.stack([s, 0.8 * s]) for s in src])   # [2, 2, n]
    mix = targets.sum(axis=0) + 0.01 * rng.standard_normal((2, n))
    return src, targets, mix


class TestScoreScenario:
    def test_matches_correct_speaker(self):
        src, targets, mix = tiny_scene()
        rows = score_scenario(src, [0, 1], targets, mix, "s0", "oracle")
        assert [r.speaker for r in rows] == [0, 1]
        assert all(r.si_sdr_db > 20 for r in rows)
        assert not rows[0].permuted

    def test_permutation_recovered_and_flagged(self):
        src, targets, mix = tiny_scene()
        rows = score_scenario(src[::-1], [0, 1], targets, mix, "s0", "oracle")
        assert [r.speaker for r in rows] == [1, 0]
        assert all(r.permuted for r in rows)

    def test_improvement_vs_reference_mic(self):
        src, targets, mix = tiny_scene()
        rows = score_scenario(src, [0, 1], targets, mix, "s0", "oracle")
        for r, est_ref in zip(rows, [0, 1]):
            base = si_sdr(mix[est_ref], targets[r.speaker, est_ref])
            assert r.improvement_db == pytest.approx(r.si_sdr_db - base)

    def test_reference_mic_estimates_have_zero_improvement(self):
        _, targets, mix = tiny_scene()
        rows = score_scenario(np.stack([mix[0], mix[1]]), [0, 1], targets, mix,
                              "s0", "reference-mic")
        for r in rows:
            assert r.improvement_db == pytest.approx(0.0, abs=1e-12)

    def test_fewer_estimates_than_sources(self):
        src, targets, mix = tiny_scene()
        rows = score_scenario(src[1:2], [0], targets, mix, "s0", "oracle")
        assert len(rows) == 1
        assert rows[0].speaker == 1

    def test_more_estimates_than_sources_rejected(self):
        src, targets, mix = tiny_scene()
        with pytest.raises(ValueError):
            score_scenario(np.vstack([src, src[:1]]), [0, 1, 0], targets, mix,
                           "s0", "x")

    def test_reference_mic_count_mismatch(self):
        src, targets, mix = tiny_scene()
        with pytest.raises(ValueError):
            score_scenario(src, [0], targets, mix, "s0", "x")


def some_rows():
    return [
        ScoreRow("s0", "dsb", 0, 5.0, 2.0, False),
        ScoreRow("s0", "dsb", 1, 7.0, 4.0, False),
        ScoreRow("s0", "ref", 0, 1.0, 0.0, False),
        ScoreRow("s1", "dsb", 0, 3.0, -1.0, True),
        ScoreRow("s1", "ref", 0, 2.0, 0.0, False),
    ]


class TestAggregateAndReports:
    def test_aggregate_values(self):
        stats = aggregate(some_rows())
        assert stats["dsb"]["count"] == 3
        assert stats["dsb"]["median_si_sdr_db"] == 5.0
        assert stats["dsb"]["mean_si_sdr_db"] == 5.0
        assert stats["dsb"]["median_improvement_db"] == 2.0
        assert stats["ref"]["count"] == 2
        assert stats["ref"]["median_si_sdr_db"] == 1.5

    def test_rows_csv_format(self, tmp_path):
        path = tmp_path / "rows.csv"
        write_rows_csv(some_rows(), path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["scenario_id", "method", "speaker", "si_sdr_db",
                           "improvement_db"]
        assert rows[1] == ["s0", "dsb", "0", "5.000000", "2.000000"]
        assert len(rows) == 6

    def test_aggregate_csv_sorted_and_formatted(self, tmp_path):
        path = tmp_path / "agg.csv"
        write_aggregate_csv(some_rows(), path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert [r[0] for r in rows[1:]] == ["dsb", "ref"]
        assert rows[1][1] == "3"
        assert rows[1][2] == "5.000000"

    def test_csv_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_rows_csv(some_rows(), a)
        write_rows_csv(some_rows(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_summary_orders_by_median(self):
        text = summary_table(some_rows())
        lines = text.splitlines()
        assert lines[1].split()[0] == "dsb"
        assert lines[2].split()[0] == "ref"
