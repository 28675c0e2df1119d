"""Tests for metrics: angular error, peaks, assignment, accuracy, AUC."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shamans.errors import ParameterError, UndefinedMetricError
from shamans.evaluate import (
    accuracy_at,
    angular_error,
    auc_source_count,
    circ_dist,
    hungarian_assign,
    match_errors,
    minmax_normalize,
    pick_peaks,
    summarize,
    SceneMetrics,
    metrics_to_csv,
)


class TestAngularError:
    def test_wraparound(self):
        assert angular_error(350.0, 10.0) == 20.0

    def test_identity(self):
        assert angular_error(90.0, 90.0) == 0.0

    def test_antipodal(self):
        assert angular_error(0.0, 180.0) == 180.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-720, 720), st.floats(-720, 720), st.floats(-720, 720))
    def test_symmetry_and_triangle(self, a, b, c):
        assert angular_error(a, b) == pytest.approx(angular_error(b, a))
        assert 0.0 <= angular_error(a, b) <= 180.0
        assert angular_error(a, c) <= angular_error(a, b) + angular_error(b, c) + 1e-9


def brute_force_peaks(spectrum, threshold, min_sep, max_peaks):
    """Independent oracle: enumerate qualifying maxima, greedy suppression."""
    n = len(spectrum)
    cands = [i for i in range(n)
             if spectrum[i] >= spectrum[(i - 1) % n]
             and spectrum[i] >= spectrum[(i + 1) % n]
             and spectrum[i] >= threshold]
    cands.sort(key=lambda i: (-spectrum[i], i))
    out = []
    for i in cands:
        if len(out) >= max_peaks:
            break
        if all(min(abs(i - j), n - abs(i - j)) > min_sep for j in out):
            out.append(i)
    return out


class TestPickPeaks:
    def test_two_peaks_example(self):
        peaks = pick_peaks(np.array([0.1, 0.9, 0.2, 0.8, 0.1]), 0.5, 1, 10)
        assert {i for i, _ in peaks} == {1, 3}
        assert peaks[0][0] == 1  # sorted by value

    def test_flat_ones_tie_breaking(self):
        peaks = pick_peaks(np.ones(60), 0.5, 2, 60)
        idx = [i for i, _ in peaks]
        assert len(idx) <= 20
        assert idx[0] == 0  # lowest index wins the tie
        assert idx == sorted(idx)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = rng.integers(5, 40)
            spectrum = minmax_normalize(rng.random(n))
            threshold = rng.random() * 0.8
            min_sep = int(rng.integers(0, 4))
            max_peaks = int(rng.integers(1, 8))
            got = [i for i, _ in pick_peaks(spectrum, threshold, min_sep, max_peaks)]
            assert got == brute_force_peaks(spectrum, threshold, min_sep, max_peaks)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=30),
           st.floats(0, 1), st.floats(0, 1))
    def test_threshold_monotonicity(self, values, t1, t2):
        lo, hi = min(t1, t2), max(t1, t2)
        spectrum = np.asarray(values)
        assert len(pick_peaks(spectrum, hi, 1, 30)) <= len(pick_peaks(spectrum, lo, 1, 30))


def brute_force_assignment(cost):
    n, k = cost.shape
    best, best_cols = np.inf, None
    for perm in itertools.permutations(range(k), n):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best:
            best, best_cols = total, perm
    return best, best_cols


class TestHungarian:
    def test_two_by_two(self):
        rows, cols, total = hungarian_assign([[1.0, 2.0], [2.0, 1.0]])
        assert total == 2.0
        assert dict(zip(rows.tolist(), cols.tolist())) == {0: 0, 1: 1}

    def test_zero_diagonal(self):
        cost = 1.0 - np.eye(4)
        rows, cols, total = hungarian_assign(cost)
        assert total == 0.0
        assert np.array_equal(rows, cols)

    def test_matches_brute_force_100_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            cost = rng.random((5, 5))
            _rows, _cols, total = hungarian_assign(cost)
            best, _ = brute_force_assignment(cost)
            assert total == pytest.approx(best, abs=1e-12)

    def test_constant_shift_invariance(self):
        # adding a constant to every entry shifts every assignment's total
        # equally, so the argmin assignment cannot change
        for seed in range(20):
            rng = np.random.default_rng(seed)
            cost = rng.random((4, 4))
            r1, c1, t1 = hungarian_assign(cost)
            r2, c2, t2 = hungarian_assign(cost + 13.7)
            assert np.array_equal(c1[np.argsort(r1)], c2[np.argsort(r2)])
            assert t2 == pytest.approx(t1 + 4 * 13.7)

    def test_empty(self):
        rows, cols, total = hungarian_assign(np.empty((0, 0)))
        assert rows.size == 0 and total == 0.0

    def test_more_truths_than_estimates_pads(self):
        cost = np.array([[1.0], [2.0], [3.0]])
        rows, cols, total = hungarian_assign(cost)
        real = [(r, c) for r, c in zip(rows, cols) if c < 1]
        assert len(real) == 1
        assert total == 1.0


class TestAccuracy:
    def test_half(self):
        assert accuracy_at([3.0, 20.0], 15.0) == 0.5

    def test_boundary_is_strict(self):
        assert accuracy_at([15.0], 15.0) == 0.0

    def test_all_zero(self):
        assert accuracy_at([0.0, 0.0, 0.0], 15.0) == 1.0

    def test_empty_raises(self):
        with pytest.raises(UndefinedMetricError):
            accuracy_at([], 15.0)

    def test_bad_threshold(self):
        with pytest.raises(ParameterError):
            accuracy_at([1.0], 0.0)


class TestMatchErrors:
    def test_perfect(self):
        errs = match_errors([0.0, 90.0], [90.0, 0.0])
        assert np.allclose(errs, 0.0)

    def test_missing_estimate_costs_180(self):
        errs = match_errors([0.0, 90.0], [2.0])
        assert sorted(errs.tolist()) == [2.0, 180.0]


def two_peak_spectrum(n, main_idx, side_idx, side_height):
    s = np.zeros(n)
    s[main_idx] = 1.0
    s[side_idx] = side_height
    return s


class TestAuc:
    def test_perfectly_separable(self):
        spectra, labels = [], []
        for i in range(10):
            # true singles have no secondary peak; doubles a high one
            if i % 2 == 0:
                spectra.append(two_peak_spectrum(32, 5, 20, 0.0))
                labels.append(1)
            else:
                spectra.append(two_peak_spectrum(32, 5, 20, 0.9))
                labels.append(2)
        auc = auc_source_count(spectra, labels, target_n=1,
                               thresholds=np.linspace(0.01, 0.99, 99))
        assert auc == pytest.approx(1.0)

    def test_constant_spectra_auc_half(self):
        spectra = [np.ones(16) for _ in range(8)]
        labels = [1, 2, 1, 2, 1, 2, 1, 2]
        auc = auc_source_count(spectra, labels, target_n=1,
                               thresholds=np.linspace(0.0, 1.0, 21))
        assert auc == pytest.approx(0.5)

    def test_matches_mann_whitney(self):
        # secondary-peak heights act as the latent score; with a threshold
        # ladder covering all midpoints the ROC is the empirical one and
        # AUC must equal the rank statistic P(h_pos < h_neg)
        rng = np.random.default_rng(3)
        h_pos = rng.uniform(0.05, 0.55, 15)  # true N = 1 scenes
        h_neg = rng.uniform(0.35, 0.95, 17)  # true N = 2 scenes
        spectra = [two_peak_spectrum(32, 4, 18, h) for h in h_pos]
        labels = [1] * 15
        spectra += [two_peak_spectrum(32, 4, 18, h) for h in h_neg]
        labels += [2] * 17
        all_h = np.sort(np.concatenate([h_pos, h_neg]))
        mids = (all_h[1:] + all_h[:-1]) / 2
        thresholds = np.concatenate([[0.001], mids, [0.999]])
        auc = auc_source_count(spectra, labels, target_n=1, thresholds=thresholds)
        mw = np.mean([[hp < hn for hn in h_neg] for hp in h_pos])
        assert auc == pytest.approx(mw, abs=1e-9)

    def test_single_class_raises(self):
        with pytest.raises(UndefinedMetricError):
            auc_source_count([np.ones(8)] * 4, [1, 1, 1, 1], 1, [0.5])


class TestReporting:
    def test_csv_and_summary(self, tmp_path):
        rows = [
            SceneMetrics("s0", "shamans", "ref", 1, 1, [0.0], 1.0),
            SceneMetrics("s1", "shamans", "ref", 1, 1, [30.0], 0.0),
            SceneMetrics("s2", "shamans", "ref", 1, 0, [], None, status="error: x"),
        ]
        path = tmp_path / "m.csv"
        metrics_to_csv(rows, path)
        text = path.read_text()
        assert "shamans" in text and "error: x" in text
        summary = summarize(rows)
        assert summary[0]["scenes"] == 2
        assert summary[0]["err_mean_deg"] == pytest.approx(15.0)
        assert summary[0]["acc15_mean"] == pytest.approx(0.5)


class TestCircDist:
    def test_wraps(self):
        assert circ_dist(0, 59, 60) == 1
        assert circ_dist(10, 40, 60) == 30
