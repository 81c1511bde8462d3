import math

import numpy as np
import pytest

from sigfilter.errors import DomainError
from sigfilter.meta_bayes import (
    McmcConfig,
    MetaModelSpec,
    StudySummary,
    conjugate_mu_posterior,
    effective_sample_size,
    fit_meta,
    log_posterior,
    mcse_mean,
    rhat,
    summarize,
    summarize_samples,
)


def study(sid, y, se, n=30):
    return StudySummary(sid, y, se, se * math.sqrt(n), n, y / se if se else 0.0, 0.5)


def negated(studies):
    return [StudySummary(s.study_id, -s.effect, s.se, s.sd, s.n, -s.t_stat, s.p_value) for s in studies]


def _normal_logpdf(x, m, s):
    return -0.5 * ((x - m) / s) ** 2 - math.log(s) - 0.5 * math.log(2 * math.pi)


class TestLogPosterior:
    def test_sign_flip_symmetry(self, case_table):
        rows = list(case_table.rows)
        m = np.array([r.effect for r in rows]) * 0.9
        a = log_posterior((-0.05, m, 0.02), rows)
        b = log_posterior((0.05, -m, 0.02), negated(rows))
        assert a == pytest.approx(b, abs=1e-12)

    def test_conditional_matches_conjugate_normal(self):
        rows = [study("a", 0.3, 0.2)]
        mu, tau = -0.1, 0.15
        spec = MetaModelSpec(prior_family="normal_test_mode", fixed_tau=tau)
        prec = 1 / 0.2**2 + 1 / tau**2
        mean = (0.3 / 0.2**2 + mu / tau**2) / prec
        sd = 1 / math.sqrt(prec)
        ref = log_posterior((mu, [mean], tau), rows, spec)
        for v in (-0.4, 0.0, 0.12, 0.5):
            got = log_posterior((mu, [v], tau), rows, spec) - ref
            want = _normal_logpdf(v, mean, sd) - _normal_logpdf(mean, mean, sd)
            assert got == pytest.approx(want, abs=1e-10)

    def test_moving_away_is_penalized(self):
        rows = [study("a", 0.0, 0.1), study("b", 0.05, 0.1)]
        vals = [log_posterior((0.1, [m1, 0.05], 0.2), rows) for m1 in (-0.01, -0.1, -0.3, -1.0)]
        assert np.all(np.diff(vals) < 0)
        vals = [log_posterior((0.1, [m1, 0.05], 0.2), rows) for m1 in (0.11, 0.3, 1.0)]
        assert np.all(np.diff(vals) < 0)

    def test_nonpositive_tau_is_minus_inf(self):
        rows = [study("a", 0.0, 0.1)]
        assert log_posterior((0.0, [0.0], 0.0), rows) == -math.inf
        assert log_posterior((0.0, [0.0], -1.0), rows) == -math.inf

    def test_dropping_mu_i_cauchy_changes_only_that_factor(self):
        rows = [study("a", 0.1, 0.1), study("b", -0.2, 0.05)]
        m = np.array([0.05, -0.1])
        full = log_posterior((0.0, m, 0.3), rows)
        reduced = log_posterior((0.0, m, 0.3), rows, MetaModelSpec(mu_i_cauchy=False))
        cauchy = sum(-math.log1p((v / 2.5) ** 2) - math.log(math.pi * 2.5) for v in m)
        assert full - reduced == pytest.approx(cauchy, abs=1e-12)


class TestFit:
    def test_case_study(self, case_fit):
        s = summarize(case_fit)["mu"]
        assert -0.065 <= s.mean <= -0.035
        assert abs(s.q2_5 - (-0.08)) <= 0.02 and abs(s.q97_5 - (-0.03)) <= 0.02
        assert rhat(case_fit, "mu") < 1.01 and rhat(case_fit, "tau") < 1.01

    def test_shape_and_positivity(self, case_fit):
        assert case_fit.mu.shape == (4, 2000)
        assert case_fit.mu_i.shape == (4, 2000, 10)
        assert np.all(case_fit.tau > 0)
        assert np.all(np.isfinite(case_fit.log_post))

    def test_acceptance_in_band(self, case_fit):
        for block, rates in case_fit.acceptance.items():
            assert np.all((rates > 0.15) & (rates < 0.6)), block

    def test_shrinkage(self, case_fit, case_table):
        mu_bar = case_fit.mu.mean()
        for j, r in enumerate(case_table.rows):
            m = case_fit.mu_i[:, :, j].mean()
            lo, hi = sorted((r.effect, mu_bar))
            assert lo < m < hi, r.study_id

    def test_zero_effects_symmetric(self):
        rows = [study(str(i), 0.0, 0.05) for i in range(5)]
        d = fit_meta(rows, mcmc=McmcConfig(iterations=3000, seed=4))
        assert abs(d.mu.mean()) <= 3 * mcse_mean(d, "mu")

    def test_deterministic_and_worker_independent(self, case_table):
        cfg = McmcConfig(chains=2, iterations=600, seed=8)
        a = fit_meta(case_table.rows, mcmc=cfg)
        b = fit_meta(case_table.rows, mcmc=cfg, workers=2)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.tau, b.tau)
        assert np.array_equal(a.mu_i, b.mu_i)

    def test_sign_equivariance(self, case_table, case_fit):
        flipped = fit_meta(negated(case_table.rows), mcmc=McmcConfig(seed=20170))
        se = math.hypot(mcse_mean(flipped, "mu"), mcse_mean(case_fit, "mu"))
        assert abs(flipped.mu.mean() + case_fit.mu.mean()) <= 3 * se

    def test_permutation_invariance(self, case_table, case_fit):
        rows = list(reversed(case_table.rows))
        d = fit_meta(rows, mcmc=McmcConfig(seed=20170))
        se = math.hypot(mcse_mean(d, "mu"), mcse_mean(case_fit, "mu"))
        assert abs(d.mu.mean() - case_fit.mu.mean()) <= 3 * se

    @pytest.mark.xfail(strict=True, reason=(
        "fails on the reconstructed data: the largest-n study (n=114) sits almost exactly on "
        "the pooled mean, so deleting it barely moves mu even though its weight is the largest"))
    def test_precision_weighting_by_deletion(self, case_table, case_fit):
        rows = list(case_table.rows)
        largest = max(rows, key=lambda r: r.n)
        smallest = min(rows, key=lambda r: r.n)
        cfg = McmcConfig(seed=20170)
        base = case_fit.mu.mean()
        drop_big = fit_meta([r for r in rows if r is not largest], mcmc=cfg).mu.mean()
        drop_small = fit_meta([r for r in rows if r is not smallest], mcmc=cfg).mu.mean()
        assert abs(drop_big - base) > abs(drop_small - base)

    def test_precision_weighting_by_perturbation(self, case_table, case_fit):
        # same shift applied to one study's effect: the largest-n study pulls mu further
        rows = list(case_table.rows)
        largest = max(rows, key=lambda r: r.n)
        smallest = min(rows, key=lambda r: r.n)
        cfg = McmcConfig(seed=20170)

        def shifted(target):
            return [StudySummary(r.study_id, r.effect + (0.05 if r is target else 0.0), r.se, r.sd,
                                 r.n, r.t_stat, r.p_value) for r in rows]

        base = case_fit.mu.mean()
        big = fit_meta(shifted(largest), mcmc=cfg).mu.mean() - base
        small = fit_meta(shifted(smallest), mcmc=cfg).mu.mean() - base
        assert big > small > 0

    def test_validation(self):
        with pytest.raises(DomainError):
            fit_meta([study("a", 0.1, 0.1)])
        with pytest.raises(DomainError):
            study("b", 0.1, 0.0)
        with pytest.raises(DomainError):
            McmcConfig(iterations=100, warmup=100)


@pytest.mark.parametrize("k", [2, 5])
def test_conjugate_oracle(k):
    rng = np.random.default_rng(k)
    rows = [study(str(i), float(rng.normal(0.2, 0.1)), float(rng.uniform(0.05, 0.2))) for i in range(k)]
    tau = 0.1
    spec = MetaModelSpec(prior_scale_mu=1.0, prior_family="normal_test_mode", fixed_tau=tau)
    d = fit_meta(rows, spec, McmcConfig(chains=4, iterations=6000, seed=31 + k))
    mean, sd = conjugate_mu_posterior(rows, 1.0, tau)
    ess = effective_sample_size(d, "mu")
    assert abs(d.mu.mean() - mean) <= 3 * sd / math.sqrt(ess)
    # SE of a sample SD is about sd / sqrt(2 ess)
    assert abs(d.mu.std(ddof=1) - sd) <= 3 * sd / math.sqrt(2 * ess)
    assert np.all(d.tau == tau)


class TestRhat:
    def test_identical_stationary_copies(self):
        x = np.random.default_rng(0).standard_normal(1_000_000)
        chain = np.concatenate([x, x])
        assert rhat(np.stack([chain, chain, chain, chain])) == pytest.approx(1.0, abs=1e-6)

    def test_separated_chains(self):
        rng = np.random.default_rng(1)
        x = np.stack([rng.normal(0, 1, 1000), rng.normal(5, 1, 1000)])
        # direct computation: between-chain variance dominates, R-hat near sqrt(1 + 25 / 2)
        assert rhat(x) > 2.0

    def test_mixed_iid_chains_near_one(self):
        x = np.random.default_rng(2).standard_normal((4, 5000))
        assert 0.999 <= rhat(x) < 1.01

    def test_single_chain_rejected(self):
        with pytest.raises(DomainError):
            rhat(np.zeros((1, 100)))


class TestSummarize:
    def test_constant(self):
        s = summarize_samples(np.full(50, 0.7))
        assert s.mean == pytest.approx(0.7, abs=1e-15) and s.sd == 0.0
        assert s.q2_5 == s.q50 == s.q97_5 == 0.7

    def test_normal_quantiles(self):
        x = np.random.default_rng(7).normal(-0.05, 0.01, 100_000)
        s = summarize_samples(x)
        assert s.q2_5 == pytest.approx(-0.0696, abs=5e-4)
        assert s.q97_5 == pytest.approx(-0.0304, abs=5e-4)
        assert sum(s.hist_counts) == x.size

    def test_linear_interpolation(self):
        s = summarize_samples([0.0, 1.0, 2.0, 3.0, 4.0])
        assert s.q50 == 2.0
        assert s.q2_5 == pytest.approx(0.1)  # 0.025 * (5 - 1)

    def test_case_fit_keys(self, case_fit):
        sums = summarize(case_fit)
        assert set(sums) == {"mu", "tau", *(f"mu_i[{j}]" for j in range(10))}
