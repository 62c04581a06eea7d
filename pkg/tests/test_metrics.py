"""Tests for estimators, diagnostics, and the race Monte Carlo oracle."""

import csv
import math

import numpy as np
import pytest

import blocktime.metrics as M
from blocktime import analytic as an
from blocktime.sim import SimConfig, run

H600 = 2**32 / 600


def sim(**overrides):
    base = {
        "miners": [{"id": 0, "share": 1.0}],
        "nodes": 1,
        "delay": {"fixed": 0.0},
        "initial_difficulty": 1.0,
        "nominal_hashrate": H600,
        "stop": {"blocks": 500},
        "seed": 0,
        "retarget_enabled": False,
    }
    base.update(overrides)
    return run(SimConfig.from_dict(base))


class TestEstimateLambda:
    def test_constant_sample(self):
        assert M.estimate_lambda([600.0] * 10) == pytest.approx(1 / 600, rel=1e-12)

    def test_mean_six_hundred(self):
        assert M.estimate_lambda([300.0, 900.0]) == pytest.approx(1 / 600, rel=1e-12)

    def test_large_sample_convergence(self):
        rng = np.random.default_rng(42)
        deltas = rng.exponential(600.0, size=100_000)
        est = M.estimate_lambda(deltas)
        # MLE standard error is lambda / sqrt(n)
        assert abs(est - 1 / 600) <= 3 * (1 / 600) / math.sqrt(100_000)

    def test_scale_equivariance(self):
        deltas = [10.0, 20.0, 55.0, 3.0]
        for c in [0.5, 2.0, 100.0]:
            assert M.estimate_lambda([c * d for d in deltas]) == pytest.approx(
                M.estimate_lambda(deltas) / c, rel=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            M.estimate_lambda([])
        with pytest.raises(ValueError):
            M.estimate_lambda([600.0])
        with pytest.raises(ValueError):
            M.estimate_lambda([600.0, -1.0])


class TestTailFrequency:
    def test_zero_threshold(self):
        rep = M.tail_frequency([1.0, 2.0, 3.0], 0.0)
        assert rep.empirical == 1.0

    def test_huge_threshold(self):
        rep = M.tail_frequency([1.0, 2.0, 3.0], 1e9)
        assert rep.empirical == 0.0

    def test_exponential_sample_matches(self):
        rng = np.random.default_rng(7)
        deltas = rng.exponential(600.0, size=1_000_000)
        rep = M.tail_frequency(deltas, 3000.0)  # p ~ e^-5 ~ 6.7e-3
        assert abs(rep.z) <= 3
        assert rep.warning is None

    def test_underpowered_flagged(self):
        rng = np.random.default_rng(7)
        deltas = rng.exponential(600.0, size=1000)
        rep = M.tail_frequency(deltas, 6360.0)
        assert rep.warning is not None and "under-powered" in rep.warning


class TestExponentialityDiagnostic:
    def test_exponential_passes(self):
        rng = np.random.default_rng(3)
        res = M.exponentiality_diagnostic(rng.exponential(600.0, size=100_000))
        assert res.passed
        assert abs(res.lag1_autocorr) < res.lag1_bound

    def test_constant_fails(self):
        res = M.exponentiality_diagnostic([600.0] * 200)
        assert not res.passed
        # KS distance of a point mass vs Exp at its own mean: 1 - 1/e
        assert res.statistic == pytest.approx(1 - math.exp(-1), rel=1e-9)

    def test_uniform_fails(self):
        rng = np.random.default_rng(3)
        res = M.exponentiality_diagnostic(rng.uniform(1.0, 2.0, size=10_000))
        assert not res.passed

    def test_minimum_sample(self):
        with pytest.raises(ValueError):
            M.exponentiality_diagnostic([1.0] * 99)


class TestEntropyTrajectory:
    def test_pointwise_equals_analytic(self):
        curve = M.entropy_trajectory(1 / 600, 25.0, 3600.0)
        for t, p, h in curve:
            assert p == pytest.approx(an.discovery_cdf(1 / 600, t), abs=1e-12)
            assert h == pytest.approx(an.bernoulli_entropy(p), abs=1e-12)

    def test_peak_row_present(self):
        curve = M.entropy_trajectory(1 / 600, 25.0, 3600.0)
        peak_t = an.entropy_peak_time(1 / 600)
        peak_rows = [r for r in curve if r[0] == peak_t]
        assert len(peak_rows) == 1
        assert peak_rows[0][2] == pytest.approx(1.0, abs=1e-12)

    def test_shape_rise_then_fall(self):
        curve = M.entropy_trajectory(1 / 600, 10.0, 3600.0)
        peak_t = an.entropy_peak_time(1 / 600)
        hs_before = [h for t, _, h in curve if t <= peak_t]
        hs_after = [h for t, _, h in curve if t >= peak_t]
        assert hs_before == sorted(hs_before)
        assert hs_after == sorted(hs_after, reverse=True)

    def test_known_values(self):
        curve = M.entropy_trajectory(1 / 600, 600.0, 3600.0)
        by_t = {t: h for t, _, h in curve}
        assert by_t[0.0] == 0.0
        assert by_t[600.0] == pytest.approx(0.9491, abs=1e-3)

    def test_domain(self):
        with pytest.raises(ValueError):
            M.entropy_trajectory(1 / 600, 0.0, 100.0)


class TestRaceMonteCarlo:
    def test_zero_deficit_exact(self):
        assert M.race_monte_carlo(0.3, 0, 1000, seed=1) == 1.0

    def test_powerless_attacker(self):
        assert M.race_monte_carlo(0.0, 3, 1000, seed=1) == 0.0

    def test_reproducible(self):
        a = M.race_monte_carlo(0.3, 5, 200_000, seed=42)
        b = M.race_monte_carlo(0.3, 5, 200_000, seed=42)
        assert a == b

    def test_matches_closed_form(self):
        for q, k in [(0.1, 2), (0.3, 5)]:
            est = M.race_monte_carlo(q, k, 200_000, seed=9)
            cf = an.catchup_probability(q, k)
            sigma = math.sqrt(cf * (1 - cf) / 200_000)
            assert abs(est - cf) <= 3 * sigma

    def test_step_cap_guard(self):
        with pytest.raises(ValueError):
            M.race_monte_carlo(0.3, 5, 1000, seed=1, step_cap=50)

    def test_domain(self):
        with pytest.raises(ValueError):
            M.race_monte_carlo(1.0, 3, 1000, seed=1)
        with pytest.raises(ValueError):
            M.race_monte_carlo(0.3, -1, 1000, seed=1)
        with pytest.raises(ValueError):
            M.race_monte_carlo(0.3, 3, 0, seed=1)

    def test_majority_attacker_estimate_near_one(self):
        est = M.race_monte_carlo(0.6, 3, 50_000, seed=4)
        assert est > 0.99


class TestForkRate:
    def test_zero_delay(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, stop={"blocks": 2000})
        rep = M.fork_rate(tr)
        assert rep.analytic == 0.0
        assert rep.empirical == 0.0
        assert rep.z == 0.0

    def test_underpowered_comparison_flagged(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, delay={"fixed": 2.0}, stop={"blocks": 2000})
        rep = M.fork_rate(tr)
        assert rep.analytic == pytest.approx(5.543e-6, rel=1e-3)
        assert rep.warning is not None and "under-powered" in rep.warning

    def test_analytic_side_is_single_source(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, delay={"fixed": 60.0}, stop={"blocks": 2000})
        rep = M.fork_rate(tr)
        assert rep.analytic == an.fork_probability(1 / 600, 60.0)

    def test_per_pair_labelled_conservative(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, delay={"per_pair": [[0.0, 30.0], [60.0, 0.0]]},
                 stop={"blocks": 500})
        rep = M.fork_rate(tr)
        assert "max pairwise delay" in rep.warning


class TestMultiDiscoveryWindowRate:
    def test_matches_formula(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, delay={"fixed": 60.0}, stop={"blocks": 20000}, seed=12)
        rep = M.multi_discovery_window_rate(tr)
        assert abs(rep.z) <= 3
        assert rep.analytic == an.fork_probability(1 / 600, 60.0)


class TestHashrateInference:
    def test_recovers_true_rate(self):
        tr = sim(stop={"blocks": 2016}, seed=1)
        ests = M.hashrate_inference_windows(tr, 1008)
        assert len(ests) == 2
        for e in ests:
            assert e == pytest.approx(H600, rel=3 / math.sqrt(1008))

    def test_window_of_one_rejected(self):
        tr = sim(stop={"blocks": 100})
        with pytest.raises(ValueError):
            M.hashrate_inference_windows(tr, 1)

    def test_chain_too_short(self):
        tr = sim(stop={"blocks": 100})
        with pytest.raises(ValueError):
            M.hashrate_inference_windows(tr, 2016)

    def test_tracks_hashrate_step(self):
        tr = sim(stop={"blocks": 4032}, seed=5, hashrate_steps=[[2016, 2.0]])
        ests = M.hashrate_inference_windows(tr, 2016)
        assert ests[0] == pytest.approx(H600, rel=0.05)
        assert ests[1] == pytest.approx(2 * H600, rel=0.05)


class TestReorgHistogram:
    def test_zero_delay_empty(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, stop={"blocks": 2000})
        assert M.reorg_depth_histogram(tr) == {}

    def test_fig2_single_depth_one(self):
        from importlib import resources
        tr = run(SimConfig.from_json(str(resources.files("blocktime") / "scenarios" / "fig2.json")))
        assert M.reorg_depth_histogram(tr) == {1: 1}

    def test_depths_nonincreasing_in_moderate_run(self):
        tr = sim(miners=[{"id": 0, "share": 0.5}, {"id": 1, "share": 0.5}],
                 nodes=2, delay={"fixed": 60.0}, stop={"blocks": 20000}, seed=12)
        hist = M.reorg_depth_histogram(tr)
        assert hist
        depths = sorted(hist)
        counts = [hist[d] for d in depths]
        assert counts == sorted(counts, reverse=True)


class TestReportsOutput:
    def test_csv_fields(self, tmp_path):
        rng = np.random.default_rng(7)
        deltas = rng.exponential(600.0, size=10_000)
        reports = [M.tail_frequency(deltas, 600.0)]
        path = tmp_path / "reports.csv"
        M.write_reports_csv(reports, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["quantity", "analytic", "empirical", "n", "stderr", "z"]
        assert rows[0]["quantity"] == "tail_frequency"
        assert float(rows[0]["analytic"]) == reports[0].analytic

    def test_report_str_mentions_warning(self):
        rep = M.ComparisonReport("x", 0.5, 0.4, 10, 0.1, -1.0, warning="under-powered: demo")
        assert "under-powered" in str(rep)
