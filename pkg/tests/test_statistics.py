from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_change import _kernels
from poisson_change.calibration import padded_rows
from poisson_change.errors import DegenerateWindowError, InvalidIntervalError, InvalidParameterError
from poisson_change.process import EventSample, window_max_count, window_min_count
from poisson_change.statistics import (
    StatKind,
    lin_stat_cond,
    lin_stat_known,
    moments_T,
    moments_Tprime,
    quad_cond_counts,
    quad_known_counts,
    quad_stat_cond,
    quad_stat_known,
    shifted_stat_cond,
    shifted_stat_known,
    sup_shifted_over_length,
    sup_shifted_over_location,
)

unit_times = st.lists(st.floats(0.0, 1.0, allow_nan=False), max_size=30)
deltas = st.floats(0.05, 3.0).flatmap(lambda m: st.sampled_from([m, -m]))


def brute_sup_length(sample, tau, delta, kind, lambda0=None, points=10**6):
    ell = np.linspace(0, 1 - tau, points + 1)[1:-1]
    c = np.searchsorted(sample.times, tau + ell, side="right") - np.searchsorted(sample.times, tau, side="right")
    s, m, L, n = np.sign(delta), abs(delta), sample.L, sample.n
    if kind == "known":
        return float(np.max(s * (c - lambda0 * L * ell) - m * L * ell / 2))
    return float(np.max(s * (c - ell * n) - m * L * ell * (1 - ell) / 2))


def brute_sup_location(sample, delta, kind, lambda0=None, points=10**6):
    tau = np.linspace(0, 1, points + 1)[1:-1]
    c = sample.n - np.searchsorted(sample.times, tau, side="right")
    ell = 1 - tau
    s, m, L, n = np.sign(delta), abs(delta), sample.L, sample.n
    if kind == "known":
        return float(np.max(s * (c - lambda0 * L * ell) - m * L * ell / 2))
    return float(np.max(s * (c - ell * n) - m * L * ell * (1 - ell) / 2))


def slope_bound(sample, delta, kind, lambda0):
    if kind == "known":
        return sample.L * (lambda0 + abs(delta) / 2)
    return sample.n + sample.L * abs(delta) / 2


class TestKind:
    def test_conditional_flag(self) -> None:
        assert StatKind.QUAD_COND.conditional
        assert not StatKind.LIN_KNOWN.conditional


class TestLinear:
    def test_empty_window(self, make_sample) -> None:
        assert lin_stat_known(make_sample([]), 0.0, 0.5, 1.0) == -50

    def test_centered(self, make_sample) -> None:
        s = make_sample(np.linspace(0.01, 0.49, 50))
        assert lin_stat_known(s, 0.0, 0.5, 1.0) == 0

    def test_sixty_in_window(self, make_sample) -> None:
        s = make_sample(np.linspace(0.21, 0.59, 60))
        assert lin_stat_known(s, 0.2, 0.6, 1.0) == pytest.approx(20)

    def test_conditional(self, make_sample) -> None:
        s = make_sample(np.concatenate([np.linspace(0.21, 0.59, 60), np.linspace(0.61, 0.99, 40)]))
        assert lin_stat_cond(s, 0.2, 0.6) == pytest.approx(20)
        assert lin_stat_cond(s, 0.0, 1.0) == 0
        assert lin_stat_cond(make_sample([]), 0.3, 0.4) == 0

    @pytest.mark.parametrize("a, b", [(0.5, 0.4), (-0.1, 0.2), (0.2, 1.1)])
    def test_invalid(self, make_sample, a, b) -> None:
        with pytest.raises(InvalidIntervalError):
            lin_stat_known(make_sample([0.5]), a, b, 1.0)

    def test_zero_length(self, make_sample) -> None:
        with pytest.raises(DegenerateWindowError):
            quad_stat_known(make_sample([0.5]), 0.3, 0.3, 1.0)


class TestShifted:
    def test_known_negative(self, make_sample) -> None:
        assert shifted_stat_known(make_sample([]), 0.0, 0.5, 1.0, -1.0) == pytest.approx(25)

    def test_known_centered(self, make_sample) -> None:
        s = make_sample(np.linspace(0.01, 0.49, 50))
        assert shifted_stat_known(s, 0.0, 0.5, 1.0, 0.7) == pytest.approx(-0.7 * 100 * 0.5 / 2)

    def test_known_positive(self, make_sample) -> None:
        s = make_sample(np.linspace(0.21, 0.59, 60))
        assert shifted_stat_known(s, 0.2, 0.6, 1.0, 0.5) == pytest.approx(10)

    def test_zero_delta(self, make_sample) -> None:
        with pytest.raises(InvalidParameterError):
            shifted_stat_known(make_sample([]), 0.0, 0.5, 1.0, 0.0)

    def test_cond_full_interval(self, make_sample) -> None:
        assert shifted_stat_cond(make_sample([0.2, 0.7]), 0.0, 1.0, 1.3) == 0

    def test_cond_empty(self, make_sample) -> None:
        assert shifted_stat_cond(make_sample([]), 0.2, 0.6, -2.0) == pytest.approx(-2.0 * 100 * 0.4 * 0.6 / 2)

    def test_cond_example(self, make_sample) -> None:
        s = make_sample(np.concatenate([np.linspace(0.21, 0.59, 60), np.linspace(0.61, 0.99, 40)]))
        assert shifted_stat_cond(s, 0.2, 0.6, 1.0) == pytest.approx(8)


class TestQuadratic:
    def test_known_empty(self, make_sample) -> None:
        assert quad_stat_known(make_sample([]), 0.25, 0.75, 1.0) == pytest.approx(0.5)

    def test_known_full(self, make_sample) -> None:
        s = make_sample(np.linspace(0.005, 0.995, 100))
        assert quad_stat_known(s, 0.0, 1.0, 1.0) == pytest.approx(-0.01)

    def test_cond_empty(self, make_sample) -> None:
        assert quad_stat_cond(make_sample([]), 0.25, 0.75) == 0

    def test_cond_all_inside(self, make_sample) -> None:
        s = make_sample(np.linspace(0.3, 0.6, 12))
        rho = 0.5
        assert quad_stat_cond(s, 0.25, 0.75) == pytest.approx((1 - rho) / rho * (12 * 11) / 100**2)

    def test_cond_full_window(self, make_sample) -> None:
        with pytest.raises(DegenerateWindowError):
            quad_stat_cond(make_sample([0.5]), 0.0, 1.0)

    def test_cond_allows_left_edge(self, make_sample) -> None:
        s = make_sample([0.1, 0.4, 0.8])
        assert math.isfinite(quad_stat_cond(s, 0.0, 0.5))

    def test_known_null_mean(self) -> None:
        rng = np.random.default_rng(11)
        x = rng.poisson(40.0, 100_000)
        t = quad_known_counts(x, 0.4, 1.0, 100.0)
        assert abs(t.mean()) < 4 * t.std() / math.sqrt(t.size)

    def test_cond_conditional_mean(self) -> None:
        rng = np.random.default_rng(12)
        pts = rng.random((100_000, 10))
        b = np.sum((pts > 0.25) & (pts <= 0.75), axis=1)
        t = quad_cond_counts(b, 10 - b, 0.5, 100.0)
        assert abs(t.mean()) < 4 * t.std() / math.sqrt(t.size)

    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=30))
    def test_conditional_stats_vanish_on_full_interval(self, times) -> None:
        s = EventSample(np.sort(times), 20.0)
        assert lin_stat_cond(s, 0.0, 1.0) == 0
        assert shifted_stat_cond(s, 0.0, 1.0, 0.5) == 0


class TestScanConsistency:
    @given(unit_times, st.floats(0.05, 0.95))
    def test_linear_max_is_count_max(self, times, ell) -> None:
        s = EventSample(np.sort(times), 30.0)
        c, tau = window_max_count(s, ell)
        assert lin_stat_known(s, tau, tau + ell, 1.0) == pytest.approx(c - 30.0 * ell)


class TestSupLength:
    def test_empty_known(self, make_sample) -> None:
        r = sup_shifted_over_length(make_sample([]), 0.3, 0.5, "known", 1.0)
        assert r.value == 0 and not r.attained

    def test_single_event(self, make_sample) -> None:
        s = make_sample([0.5], L=10.0)
        for d in (0.4, 2.0):
            exact = sup_shifted_over_length(s, 0.2, d, "known", 1.0).value
            assert exact == pytest.approx(max(0.0, 1 - (1 + d / 2) * 3), abs=1e-12)
            assert abs(exact - brute_sup_length(s, 0.2, d, "known", 1.0)) <= 2e-5

    def test_cond_empty_negative(self, make_sample) -> None:
        s = make_sample([], L=10.0)
        exact = sup_shifted_over_length(s, 0.3, -1.5, "cond").value
        assert abs(exact - brute_sup_length(s, 0.3, -1.5, "cond")) <= 1e-4

    def test_invalid(self, make_sample) -> None:
        with pytest.raises(InvalidParameterError):
            sup_shifted_over_length(make_sample([]), 1.0, 0.5, "known", 1.0)
        with pytest.raises(InvalidParameterError):
            sup_shifted_over_length(make_sample([]), 0.5, 0.5, "known")

    @given(unit_times, st.floats(0.02, 0.95), deltas, st.sampled_from(["known", "cond"]))
    def test_dominates_grid(self, times, tau, delta, kind) -> None:
        s = EventSample(np.sort(times), 20.0)
        exact = sup_shifted_over_length(s, tau, delta, kind, 1.0).value
        assert exact >= brute_sup_length(s, tau, delta, kind, 1.0, points=1000) - 1e-9

    @given(st.lists(st.integers(1, 9_999), max_size=20, unique=True), st.integers(1, 95), deltas, st.sampled_from(["known", "cond"]))
    def test_convex_pieces_match_dense_grid(self, ticks, tau_ticks, delta, kind) -> None:
        s = EventSample(np.sort(np.array(ticks) / 1e4 + 3e-6), 20.0)
        tau = tau_ticks / 100 + 1.7e-6
        exact = sup_shifted_over_length(s, tau, delta, kind, 1.0).value
        grid = brute_sup_length(s, tau, delta, kind, 1.0, points=10**5)
        assert grid <= exact + 1e-9
        assert exact - grid <= slope_bound(s, delta, kind, 1.0) * 1e-5 * 1.01 + 1e-9


class TestSupLocation:
    def test_empty(self, make_sample) -> None:
        assert sup_shifted_over_location(make_sample([]), 0.8, "known", 1.0).value == pytest.approx(0.0)

    def test_one_event(self, make_sample) -> None:
        s = make_sample([0.5], L=10.0)
        exact = sup_shifted_over_location(s, 1.0, "known", 1.0).value
        assert abs(exact - brute_sup_location(s, 1.0, "known", 1.0)) <= 2e-5

    def test_dense_negative(self) -> None:
        s = EventSample(np.sort(np.random.default_rng(3).random(200)), 100.0)
        exact = sup_shifted_over_location(s, -0.6, "known", 1.0).value
        assert abs(exact - brute_sup_location(s, -0.6, "known", 1.0)) <= 1.3e-4

    def test_zero_delta(self, make_sample) -> None:
        with pytest.raises(InvalidParameterError):
            sup_shifted_over_location(make_sample([]), 0.0, "cond")

    @given(unit_times, deltas, st.sampled_from(["known", "cond"]))
    def test_dominates_grid(self, times, delta, kind) -> None:
        s = EventSample(np.sort(times), 20.0)
        exact = sup_shifted_over_location(s, delta, kind, 1.0).value
        assert exact >= brute_sup_location(s, delta, kind, 1.0, points=1000) - 1e-9


class TestKernelsMatchNumpy:
    """The compiled row kernels and the sample-level evaluators are two routes to one value."""

    @given(st.lists(unit_times, min_size=1, max_size=6), st.floats(0.02, 1.0))
    def test_window_extrema(self, rows, ell) -> None:
        pts, lens = self._pad(rows)
        mx = _kernels.rows_window_max(pts, lens, ell)
        mn = _kernels.rows_window_min(pts, lens, ell)
        for i, r in enumerate(rows):
            s = EventSample(np.sort(r), 10.0)
            assert mx[i] == window_max_count(s, ell)[0]
            assert mn[i] == window_min_count(s, ell)[0]

    @given(st.lists(unit_times, min_size=1, max_size=6), st.floats(0.02, 0.98), deltas, st.booleans())
    def test_sup_length(self, rows, tau, delta, cond) -> None:
        pts, lens = self._pad(rows)
        out = _kernels.rows_sup_length(pts, lens, tau, delta, 1.3, 20.0, cond)
        for i, r in enumerate(rows):
            s = EventSample(np.sort(r), 20.0)
            assert out[i] == sup_shifted_over_length(s, tau, delta, "cond" if cond else "known", 1.3).value

    @given(st.lists(unit_times, min_size=1, max_size=6), deltas, st.booleans())
    def test_sup_location(self, rows, delta, cond) -> None:
        pts, lens = self._pad(rows)
        out = _kernels.rows_sup_location(pts, lens, delta, 1.3, 20.0, cond)
        for i, r in enumerate(rows):
            s = EventSample(np.sort(r), 20.0)
            assert out[i] == sup_shifted_over_location(s, delta, "cond" if cond else "known", 1.3).value

    @staticmethod
    def _pad(rows):
        lens = np.array([len(r) for r in rows], dtype=np.int64)
        pts = np.full((len(rows), max(1, lens.max())), 2.0)
        for i, r in enumerate(rows):
            pts[i, : len(r)] = np.sort(r)
        return pts, lens

    def test_padded_rows_shape(self) -> None:
        rng = np.random.default_rng(0)
        pts = padded_rows(rng, np.array([0, 3, 1]))
        assert pts.shape[0] == 3
        assert np.all(np.diff(pts[1, :3]) >= 0)


class TestMoments:
    def test_null(self) -> None:
        mean, var = moments_T(0.4, 0.2, 0.6, 1.0, 100.0)
        assert mean == pytest.approx(0.0, abs=1e-15)
        assert var == pytest.approx(2 / 100**2)

    def test_alternative_mean(self) -> None:
        mean, _ = moments_T((1 + 0.7) * 0.3, 0.1, 0.4, 1.0, 100.0)
        assert mean == pytest.approx(0.49 * 0.3)

    def test_hand_value(self) -> None:
        assert moments_T(1.0, 0.25, 0.75, 1.0, 100.0)[0] == pytest.approx(0.5)

    def test_tprime_balanced(self) -> None:
        assert moments_Tprime(0.25, 0.5, 0.25, 0.25, 0.75, 100.0)[0] == pytest.approx(0.0)
        assert moments_Tprime(0.2, 0.4, 0.4, 0.2, 0.6, 50.0)[0] == pytest.approx(0.0, abs=1e-15)

    def test_tprime_full_window(self) -> None:
        with pytest.raises(DegenerateWindowError):
            moments_Tprime(0.0, 1.0, 0.0, 0.0, 1.0, 10.0)

    @pytest.mark.parametrize("x, y, z, a, b", [(0.2, 0.9, 0.3, 0.2, 0.6), (0.0, 0.4, 0.5, 0.0, 0.5)])
    def test_tprime_monte_carlo(self, x, y, z, a, b) -> None:
        L, N = 50.0, 400_000
        rng = np.random.default_rng(21)
        A = rng.poisson(L * x, N) + rng.poisson(L * z, N)
        B = rng.poisson(L * y, N)
        t = quad_cond_counts(B, A, b - a, L)
        mean, var = moments_Tprime(x, y, z, a, b, L)
        assert abs(t.mean() - mean) < 4 * math.sqrt(var / N)
        assert abs(t.var() - var) < 0.02 * var
