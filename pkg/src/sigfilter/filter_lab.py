"""Repeated-study simulation under the significance filter.

A known scenario is sampled ``n_sims`` times; only significant studies are
"published".  The report measures what the published record looks like:
exaggerated effects (Type M), wrong signs (Type S) and inflated post-hoc
power relative to the true power (the Power Inflation Index, PII).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import seeding
from .errors import DomainError
from .stat_core import (
    EffectScenario,
    Family,
    Sidedness,
    TestSpec,
    exact_t_power,
    power_from_z,
    std_normal_quantile,
    t_critical,
    z_test_power,
)


@dataclass(frozen=True)
class FilterSimConfig:
    scenario: EffectScenario
    spec: TestSpec
    n_sims: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if int(self.n_sims) != self.n_sims or self.n_sims < 1:
            raise DomainError(f"n_sims must be a positive integer, got {self.n_sims!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.spec.is_t and self.scenario.n < 2:
            raise DomainError("t tests need n >= 2")


@dataclass(frozen=True)
class FilterReport:
    """Aggregates of one filter simulation.

    Published-conditional fields are ``None`` when nothing was published;
    ``exaggeration_ratio`` is ``None`` when the true effect is zero.
    """

    true_power: float
    n_sims: int
    n_published: int
    publication_rate: float
    mc_se_publication_rate: float
    mean_published_abs_effect: float | None
    exaggeration_ratio: float | None
    mc_se_exaggeration: float | None
    sign_error_rate: float | None
    mean_estimated_power_published: float | None
    min_estimated_power_published: float | None
    pii_vs_true: float | None
    mc_se_pii: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def true_power(scenario: EffectScenario, spec: TestSpec) -> float:
    if spec.family is Family.Z:
        return float(z_test_power(scenario.delta(spec.mu0), spec.alpha, spec.sidedness))
    return exact_t_power(scenario, spec)


def pii_lower_bound(true_power: float, alpha: float = 0.05, spec: TestSpec | None = None) -> float:
    """Smallest possible PII of a published study, ``0.5 / true_power``.

    Every study that clears a one-sided z filter has ``z >= z_alpha`` and so a
    post-hoc power of at least ``power_from_z(z_alpha) = 0.5``.  For a
    two-sided filter the floor is the two-sided post-hoc power at
    ``z_{alpha/2}``, a hair above 0.5.  The bound is z-based; for t
    families with small df it is approximate.
    """
    if not 0.0 < true_power <= 1.0:
        raise DomainError(f"true_power must lie in (0, 1], got {true_power!r}")
    if spec is not None:
        alpha = spec.alpha
    if spec is not None and spec.sidedness is Sidedness.TWO_SIDED:
        crit = std_normal_quantile(1.0 - alpha / 2.0)
        floor = power_from_z(crit, alpha, two_sided=True)
    else:
        floor = 0.5
    return floor / true_power


def power_curve(alpha: float, z_grid) -> list[tuple[float, float]]:
    """Post-hoc power along a sorted grid of observed z values."""
    z = np.asarray(z_grid, dtype=float).ravel()
    if not np.all(np.isfinite(z)):
        raise DomainError("z grid must be finite")
    if np.any(np.diff(z) < 0):
        raise DomainError("z grid must be sorted in increasing order")
    p = power_from_z(z, alpha)
    return [(float(a), float(b)) for a, b in zip(z, np.atleast_1d(p))]


def _simulate_partition(config: FilterSimConfig, index: int, size: int) -> dict:
    sc, spec = config.scenario, config.spec
    rng = seeding.stream(config.seed, index)
    x = rng.standard_normal((size, sc.n)) * sc.sigma + sc.mu
    mean = x.mean(axis=1)
    if spec.family is Family.Z:
        stat = (mean - spec.mu0) / (sc.sigma / math.sqrt(sc.n))
        tail = spec.alpha / 2.0 if spec.sidedness is Sidedness.TWO_SIDED else spec.alpha
        crit = std_normal_quantile(1.0 - tail)
    else:
        sd = x.std(axis=1, ddof=1)
        stat = (mean - spec.mu0) / (sd / math.sqrt(sc.n))
        crit = t_critical(spec.alpha, sc.n - 1, spec.sidedness)
    if spec.sidedness is Sidedness.GREATER:
        published = stat > crit
    elif spec.sidedness is Sidedness.LESS:
        published = stat < -crit
    else:
        published = np.abs(stat) > crit
    return {"effect": mean[published] - spec.mu0, "stat": stat[published]}


def simulate_filter(config: FilterSimConfig, workers: int = 1) -> FilterReport:
    """Simulate ``n_sims`` studies and summarize those that pass the filter.

    Replicates are cut into fixed-size partitions, each with its own stream
    derived from ``(seed, partition index)``, and gathered in partition order,
    so the report is bit-identical for any ``workers``.
    """
    sc, spec = config.scenario, config.spec
    bounds = seeding.partitions(config.n_sims)
    jobs = [(i, hi - lo) for i, (lo, hi) in enumerate(bounds)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _simulate_partition(config, *job), jobs))
    else:
        parts = [_simulate_partition(config, *job) for job in jobs]
    effect = np.concatenate([p["effect"] for p in parts])
    stat = np.concatenate([p["stat"] for p in parts])

    power = true_power(sc, spec)
    m = config.n_sims
    k = int(effect.size)
    rate = k / m
    se_rate = math.sqrt(max(power * (1.0 - power), 0.0) / m)
    report = dict(true_power=power, n_sims=m, n_published=k,
                  publication_rate=rate, mc_se_publication_rate=se_rate)
    if k == 0:
        return FilterReport(**report, mean_published_abs_effect=None, exaggeration_ratio=None,
                            mc_se_exaggeration=None, sign_error_rate=None,
                            mean_estimated_power_published=None,
                            min_estimated_power_published=None, pii_vs_true=None, mc_se_pii=None)

    # post-hoc power: the observed statistic plugged in as if it were the true z
    two = spec.sidedness is Sidedness.TWO_SIDED
    oriented = -stat if spec.sidedness is Sidedness.LESS else stat
    est = np.atleast_1d(power_from_z(oriented, spec.alpha, two_sided=two))

    true_effect = sc.mu - spec.mu0
    abs_eff = np.abs(effect)
    # sign of a zero true effect is taken as positive
    direction = 1.0 if true_effect >= 0 else -1.0
    sign_err = float(np.mean(np.sign(effect) != direction))

    sd_of_mean = lambda v: float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else None
    if true_effect != 0:
        exagg = float(abs_eff.mean()) / abs(true_effect)
        se_abs = sd_of_mean(abs_eff)
        se_exagg = None if se_abs is None else se_abs / abs(true_effect)
    else:
        exagg = se_exagg = None
    mean_est = float(est.mean())
    se_est = sd_of_mean(est)
    return FilterReport(
        **report,
        mean_published_abs_effect=float(abs_eff.mean()),
        exaggeration_ratio=exagg,
        mc_se_exaggeration=se_exagg,
        sign_error_rate=sign_err,
        mean_estimated_power_published=mean_est,
        min_estimated_power_published=float(est.min()),
        pii_vs_true=mean_est / power,
        mc_se_pii=None if se_est is None else se_est / power,
    )
