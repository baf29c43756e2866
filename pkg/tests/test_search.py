import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfb_kit.data import select_anchor
from tfb_kit.metrics import MetricKind, evaluate
from tfb_kit.netcore import bayesianize_network
from tfb_kit.search import (
    DEFAULT_GRID,
    SearchConfig,
    ToleranceMode,
    binary_search,
    binary_search_sigma,
    grid_interpolated_sigma,
    grid_search,
    interpolate_sigma,
)


class TestConfig:
    def test_defaults(self):
        cfg = SearchConfig()
        assert (cfg.bracket_lo, cfg.bracket_hi, cfg.max_rounds, cfg.mc_samples) == (0.001, 0.015, 5, 10)
        assert cfg.epsilon == 0.003
        assert SearchConfig(metric="acc").epsilon == 0.01

    def test_relative_resolution(self):
        assert SearchConfig(epsilon=0.01).resolve_epsilon(-2.0) == pytest.approx(0.02)
        assert SearchConfig(epsilon=0.01, tolerance_mode="absolute").resolve_epsilon(5.0) == 0.01

    @pytest.mark.parametrize("kw", [dict(bracket_lo=0.2, bracket_hi=0.1), dict(epsilon=0.0), dict(max_rounds=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SearchConfig(**kw)


class TestBinarySearch:
    def test_linear_metric(self):
        p0, lo, hi = 2.0, 0.001, 0.015
        cfg = SearchConfig(epsilon=0.003, bracket_lo=lo, bracket_hi=hi)
        trace = binary_search(lambda s: p0 + s, p0, cfg)
        eps_abs = 0.003 * p0
        assert trace.epsilon_abs == pytest.approx(eps_abs)
        assert abs(trace.result_sigma - min(eps_abs, hi)) <= (hi - lo) / 2**5

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(0.0, 0.5),
        st.floats(0.01, 1.0),
        st.floats(1e-4, 2.0),
        st.floats(0.1, 10.0),
        st.integers(1, 12),
    )
    def test_monotone_metric_optimum(self, lo, width, eps, slope, rounds):
        hi = lo + width
        cfg = SearchConfig(tolerance_mode="absolute", epsilon=eps, bracket_lo=lo, bracket_hi=hi, max_rounds=rounds)
        trace = binary_search(lambda s: 1.0 + slope * s, 1.0, cfg)
        optimum = min(max(eps / slope, lo), hi)
        assert abs(trace.result_sigma - optimum) <= width / 2**rounds + 1e-12
        for k, probe in enumerate(trace.probes, start=1):
            assert probe.width == (hi - lo) / 2**k
            assert probe.hi - probe.lo == pytest.approx(probe.width, rel=1e-12, abs=1e-15)
            if probe.accepted:
                assert abs(probe.value - 1.0) < eps

    def test_always_accept(self):
        lo, hi = 0.001, 0.015
        trace = binary_search(lambda s: 0.0, 0.0, SearchConfig(tolerance_mode="absolute", epsilon=1e9))
        assert all(p.accepted for p in trace.probes)
        assert trace.result_sigma == pytest.approx(hi - (hi - lo) / 2**5, abs=1e-15)
        assert trace.result_sigma == trace.probes[-1].sigma_q

    def test_never_accept(self):
        trace = binary_search(lambda s: 1.0 + s, 1.0, SearchConfig(tolerance_mode="absolute", epsilon=1e-300))
        assert trace.result_sigma == 0.001
        assert trace.none_accepted

    def test_strict_comparison(self):
        # exactly at the tolerance is rejected
        cfg = SearchConfig(tolerance_mode="absolute", epsilon=0.5, bracket_lo=0.0, bracket_hi=1.0, max_rounds=1)
        assert not binary_search(lambda s: s, 0.0, cfg).probes[0].accepted

    def test_non_finite_baseline(self):
        with pytest.raises(FloatingPointError):
            binary_search(lambda s: s, float("nan"), SearchConfig())

    def test_probe_count(self):
        trace = binary_search(lambda s: s, 0.0, SearchConfig(max_rounds=7))
        assert len(trace.probes) == 7
        assert trace.result_sigma == trace.probes[-1].lo


class TestInterpolation:
    def test_linear_recovers_analytic(self):
        grid = list(DEFAULT_GRID)
        p0, slope, eps = 0.8, 3.0, 0.05
        sigma, table = grid_search(
            lambda s: p0 + slope * s, p0, grid, eps, SearchConfig(tolerance_mode="absolute", epsilon=eps)
        )
        assert abs(sigma - eps / slope) <= 1e-9
        assert not table.clamped

    def test_accuracy_polarity(self):
        grid = [0.0, 0.1, 0.2, 0.3]
        sigma, table = grid_search(lambda s: 0.9 - s, 0.9, grid, 0.15, SearchConfig(metric="acc"))
        assert table.target == pytest.approx(0.75)
        assert sigma == pytest.approx(0.15, abs=1e-12)

    def test_knot_hit(self):
        sigmas = [0.1, 0.2, 0.3, 0.4]
        values = [1.0, 1.5, 2.0, 3.0]
        assert interpolate_sigma(sigmas, values, 2.0) == (0.3, False)

    def test_two_points(self):
        s, v, target = [0.01, 0.05], [1.0, 1.4], 1.1
        expected = 0.01 + (target - 1.0) * (0.05 - 0.01) / (1.4 - 1.0)
        assert interpolate_sigma(s, v, target)[0] == pytest.approx(expected, abs=1e-15)

    def test_clamping(self):
        assert interpolate_sigma([0.1, 0.2], [1.0, 1.1], 5.0) == (0.2, True)
        assert interpolate_sigma([0.1, 0.2], [1.0, 1.1], 0.5) == (0.1, True)

    def test_order_invariance(self):
        calls = []

        def metric(s):
            calls.append(s)
            return 1.0 + s**2

        grid = [0.1, 0.2, 0.3, 0.4, 0.5]
        a = grid_search(metric, 1.0, grid, 0.1, SearchConfig())
        b = grid_search(metric, 1.0, list(grid), 0.1, SearchConfig())
        assert a[0] == b[0] and a[1].values == b[1].values

    def test_unsorted_grid(self):
        with pytest.raises(ValueError):
            grid_search(lambda s: s, 0.0, [0.2, 0.1], 0.1, SearchConfig())


class TestOnNetworks:
    def test_binary_search_on_classifier(self, blobs_model):
        net, ds, _ = blobs_model
        _, post = bayesianize_network(net, 0.0)
        anchor = select_anchor(ds, 100, 0)
        cfg = SearchConfig(metric="nll", epsilon=0.05, bracket_lo=0.0, bracket_hi=2.0, mc_samples=10, seed=1)
        trace = binary_search_sigma(post, net, anchor, cfg)
        assert len(trace.probes) == 5
        assert trace.p0 == evaluate(net, None, anchor, "nll").value
        for p in trace.probes:
            again = evaluate(net, post.with_sigma(p.sigma_q), anchor, "nll", 10, 1).value
            assert again == p.value
        assert 0.0 <= trace.result_sigma <= 2.0

    def test_grid_parallel_matches_serial(self, blobs_model, monkeypatch):
        net, ds, _ = blobs_model
        _, post = bayesianize_network(net, 0.0)
        anchor = select_anchor(ds, 80, 0)
        cfg = SearchConfig(metric="nll", epsilon=0.02)
        grid = [0.05 * k for k in range(1, 9)]
        monkeypatch.setenv("TFB_KIT_THREADS", "1")
        serial = grid_interpolated_sigma(post, net, anchor, grid, None, cfg)
        monkeypatch.setenv("TFB_KIT_THREADS", "4")
        parallel = grid_interpolated_sigma(post, net, anchor, grid, None, cfg)
        assert serial[0] == parallel[0]
        assert serial[1].values == parallel[1].values

    def test_crn_makes_metric_continuous(self, blobs_model):
        net, ds, _ = blobs_model
        _, post = bayesianize_network(net, 0.0)
        anchor = select_anchor(ds, 80, 0)
        a = evaluate(net, post.with_sigma(0.3), anchor, MetricKind.NLL, 10, 4).value
        b = evaluate(net, post.with_sigma(0.3 + 1e-9), anchor, MetricKind.NLL, 10, 4).value
        assert abs(a - b) <= 1e-6
