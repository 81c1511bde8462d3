import math

import numpy as np
import pytest

from sigfilter.errors import DomainError
from sigfilter.meta_bayes import StudySummary
from sigfilter.power_mc import (
    PRINTED_ROUNDED_GAMMA,
    GammaSpec,
    gamma_from_moments,
    pii_distribution,
    power_distribution_from_draws,
    sample_power_distribution,
    sample_precisions,
    study_power_estimate,
)
from sigfilter.stat_core import EffectScenario, TestSpec, exact_t_power

SPEC = TestSpec("paired_t", "two_sided", 0.05)
GAMMA = gamma_from_moments(16.3, 7.07)


@pytest.fixture(scope="module")
def dists():
    return {n: sample_power_distribution(-0.05, 0.01, GAMMA, n, 100_000, SPEC, seed=424)
            for n in (20, 30, 40, 50)}


class TestGamma:
    def test_moment_matching(self):
        g = gamma_from_moments(16.3, 7.07)
        assert g.rate == pytest.approx(16.3 / 7.07**2, rel=1e-15)
        assert g.shape == pytest.approx(5.31, rel=5e-3)
        assert g.rate == pytest.approx(0.326, rel=5e-3)
        # printed at one decimal
        assert round(g.shape, 1) == PRINTED_ROUNDED_GAMMA.shape
        assert round(g.rate, 1) == PRINTED_ROUNDED_GAMMA.rate

    def test_exponential(self):
        g = gamma_from_moments(1.0, 1.0)
        assert (g.shape, g.rate) == (1.0, 1.0)

    @pytest.mark.parametrize("mean,sd", [(16.3, 7.07), (0.2, 3.0), (5.0, 0.01)])
    def test_round_trip(self, mean, sd):
        g = gamma_from_moments(mean, sd)
        assert g.mean == pytest.approx(mean, rel=1e-12)
        assert g.sd == pytest.approx(sd, rel=1e-12)
        h = gamma_from_moments(g.mean, g.sd)
        assert h.shape == pytest.approx(g.shape, rel=1e-12) and h.rate == pytest.approx(g.rate, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            gamma_from_moments(0.0, 1.0)
        with pytest.raises(DomainError):
            gamma_from_moments(1.0, -1.0)

    def test_sampler_moments(self):
        m = 1_000_000
        x = sample_precisions(GAMMA, m, np.random.default_rng(17))
        var = GAMMA.variance
        assert abs(x.mean() - GAMMA.mean) <= 4 * math.sqrt(var / m)
        # Var of the sample variance for a Gamma: sigma^4 (2/(m-1) + kurtosis_excess/m), excess = 6/shape
        se_var = var * math.sqrt(2 / (m - 1) + 6 / GAMMA.shape / m)
        assert abs(x.var(ddof=1) - var) <= 4 * se_var


class TestPowerDistribution:
    def test_mean_power_band(self, dists):
        for d in dists.values():
            assert 0.1 <= d.mean_power <= 0.45

    def test_nondecreasing_in_n(self, dists):
        means = [dists[n].mean_power for n in (20, 30, 40, 50)]
        assert np.all(np.diff(means) >= 0)
        # common random numbers make it hold draw by draw, not just on average
        assert np.all(dists[30].power_samples >= dists[20].power_samples - 1e-12)

    def test_mostly_below_0_4(self, dists):
        for n in (20, 30, 40):
            assert np.mean(dists[n].power_samples < 0.4) > 0.5

    def test_at_least_size(self, dists):
        for d in dists.values():
            assert np.all(d.power_samples >= SPEC.alpha - 1e-9)
            assert np.all(d.power_samples <= 1.0)

    def test_histogram(self, dists):
        d = dists[40]
        assert d.hist_counts.sum() == 100_000
        assert np.allclose(np.diff(d.hist_edges), 0.02)
        assert d.hist_edges[0] == 0.0 and d.hist_edges[-1] == 1.0

    def test_degenerate_limit(self):
        d = sample_power_distribution(-0.05, 0.0, 16.0, 30, 500, SPEC, seed=1)
        want = exact_t_power(EffectScenario(0.05, 0.25, 30), SPEC)
        assert np.allclose(d.power_samples, want, rtol=0, atol=1e-14)

    def test_deterministic_and_worker_independent(self):
        a = sample_power_distribution(-0.05, 0.01, GAMMA, 25, 20_000, SPEC, seed=3)
        b = sample_power_distribution(-0.05, 0.01, GAMMA, 25, 20_000, SPEC, seed=3, workers=4)
        assert np.array_equal(a.power_samples, b.power_samples)
        assert a.quantiles == b.quantiles

    def test_from_draws_matches_summary_route(self):
        rng = np.random.default_rng(9)
        eff = rng.normal(-0.05, 0.01, 50_000)
        a = power_distribution_from_draws(eff, GAMMA, 40, SPEC, seed=2)
        b = sample_power_distribution(-0.05, 0.01, GAMMA, 40, 50_000, SPEC, seed=5)
        se = math.hypot(a.power_samples.std(), b.power_samples.std()) / math.sqrt(50_000)
        assert abs(a.mean_power - b.mean_power) <= 4 * se

    def test_validation(self):
        with pytest.raises(DomainError):
            sample_power_distribution(-0.05, 0.01, GAMMA, 1, 10, SPEC)
        with pytest.raises(DomainError):
            sample_power_distribution(-0.05, 0.01, GAMMA, 20, 10, TestSpec("z", "two_sided"))


class TestPii:
    def test_point_mass_is_one(self):
        d = sample_power_distribution(-0.05, 0.0, 16.0, 30, 200, SPEC, seed=1)
        p = pii_distribution(d.mean_power, d)
        assert np.allclose(p.ratio_samples, 1.0, atol=1e-12)

    def test_scale_property(self, dists):
        a = pii_distribution(0.3, dists[20])
        b = pii_distribution(0.6, dists[20])
        assert b.ci_2_5 == 2 * a.ci_2_5 and b.ci_97_5 == 2 * a.ci_97_5

    def test_cross_study_ratio(self, dists, case_table):
        rows = {r.study_id: r for r in case_table.rows}
        pa, pb = study_power_estimate(rows["2"], SPEC), study_power_estimate(rows["7"], SPEC)
        a, b = pii_distribution(pa, dists[30]), pii_distribution(pb, dists[30])
        assert a.ci_2_5 / b.ci_2_5 == pytest.approx(pa / pb, rel=1e-12)
        assert a.ci_97_5 / b.ci_97_5 == pytest.approx(pa / pb, rel=1e-12)

    def test_study_two_at_n20(self, dists, case_table):
        p = pii_distribution(study_power_estimate(case_table.by_id("2"), SPEC), dists[20])
        assert abs(p.ci_2_5 - 3.67) <= 0.3 * 3.67
        assert abs(p.ci_97_5 - 12.45) <= 0.3 * 12.45
        assert 0 < p.ci_2_5 <= p.ci_97_5

    def test_exclusion_counted(self):
        from sigfilter.power_mc import PowerDistribution

        samples = np.array([0.0, 1e-13, 0.2, 0.4])
        d = PowerDistribution(20, samples, float(samples.mean()), (0, 0, 0), np.array([0, 1]), np.array([4]), 0.05)
        p = pii_distribution(0.4, d)
        assert p.n_excluded == 2 and np.array_equal(p.ratio_samples, [2.0, 1.0])

    def test_domain(self, dists):
        with pytest.raises(DomainError):
            pii_distribution(0.0, dists[20])


class TestStudyPower:
    def test_zero_effect_is_size(self):
        s = StudySummary("z", 0.0, 0.02, 0.2, 100, 0.0, 1.0)
        assert study_power_estimate(s, SPEC) == pytest.approx(0.05, abs=1e-9)

    def test_study_one(self, case_table):
        r = case_table.by_id("1")
        assert r.effect == pytest.approx(-0.0601, abs=5e-5)
        p = study_power_estimate(r, SPEC)
        assert SPEC.alpha < p < 1

    def test_monotone_in_effect(self):
        vals = [study_power_estimate(StudySummary("x", e, 0.03, 0.2, 40, e / 0.03, 0.1), SPEC)
                for e in np.linspace(0.0, 0.2, 21)]
        assert np.all(np.diff(vals) > 0)
