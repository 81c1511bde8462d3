"""Monte Carlo power distributions and Power Inflation Index intervals.

Uncertainty about the true effect (a normal summary of the meta-analytic
posterior, or the posterior draws themselves) and about the study's
precision (Gamma-distributed across studies) is pushed through exact t-test
power to give a distribution of power at each sample size.  Dividing a
single study's own power estimate by those samples gives the PII
distribution.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import seeding
from .errors import DomainError
from .meta_bayes import StudySummary
from .stat_core import EffectScenario, Sidedness, TestSpec, exact_t_power, t_test_power

POWER_BIN_WIDTH = 0.02
POWER_BIN_EDGES = np.linspace(0.0, 1.0, int(round(1.0 / POWER_BIN_WIDTH)) + 1)
EXCLUDE_BELOW = 1e-12


@dataclass(frozen=True)
class GammaSpec:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError("Gamma shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def variance(self) -> float:
        return self.shape / self.rate**2

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


# (5.3, 0.3) as printed; the moment-matched values are gamma_from_moments(16.3, 7.07)
PRINTED_ROUNDED_GAMMA = GammaSpec(5.3, 0.3)


def gamma_from_moments(mean: float, sd: float) -> GammaSpec:
    """Gamma with the given mean and SD: ``rate = mean / sd^2``, ``shape = mean * rate``."""
    if not (mean > 0 and sd > 0):
        raise DomainError("mean and sd must be positive")
    rate = mean / (sd * sd)
    return GammaSpec(shape=mean * rate, rate=rate)


@dataclass(frozen=True)
class PowerDistribution:
    sample_size: int
    power_samples: np.ndarray
    mean_power: float
    quantiles: tuple[float, float, float]
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    alpha: float

    def to_dict(self, include_samples: bool = False) -> dict:
        out = {
            "sample_size": self.sample_size,
            "draws": int(self.power_samples.size),
            "mean_power": self.mean_power,
            "q2_5": self.quantiles[0],
            "q50": self.quantiles[1],
            "q97_5": self.quantiles[2],
            "fraction_below_0_4": float(np.mean(self.power_samples < 0.4)),
        }
        if include_samples:
            out["power_samples"] = self.power_samples.tolist()
        return out


@dataclass(frozen=True)
class PiiDistribution:
    study_id: str
    sample_size: int
    study_power: float
    ratio_samples: np.ndarray
    ci_2_5: float
    ci_97_5: float
    mean_ratio: float
    n_excluded: int


def sample_precisions(precision: GammaSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """Gamma(shape, rate) draws; numpy parameterizes by scale = 1 / rate."""
    return rng.gamma(precision.shape, 1.0 / precision.rate, size)


def _quantiles(x) -> tuple[float, float, float]:
    q = np.quantile(x, [0.025, 0.5, 0.975], method="linear")
    return float(q[0]), float(q[1]), float(q[2])


def _build(n, samples, spec) -> PowerDistribution:
    counts, edges = np.histogram(np.clip(samples, 0.0, 1.0), bins=POWER_BIN_EDGES)
    return PowerDistribution(
        sample_size=int(n), power_samples=samples, mean_power=float(samples.mean()),
        quantiles=_quantiles(samples), hist_edges=edges, hist_counts=counts, alpha=spec.alpha,
    )


def _power_at(effect, sd, n, spec):
    ncp = np.abs(effect) * math.sqrt(n) / sd
    return np.asarray(t_test_power(ncp, n - 1, spec.alpha, spec.sidedness), dtype=float)


def _validate(n, draws, spec):
    if int(n) != n or n < 2:
        raise DomainError(f"n must be an integer >= 2, got {n!r}")
    if int(draws) != draws or draws < 1:
        raise DomainError(f"draws must be a positive integer, got {draws!r}")
    if not isinstance(spec, TestSpec) or not spec.is_t:
        raise DomainError("power distributions need a t-family TestSpec")


def _map(fn, jobs, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def sample_power_distribution(effect_mean: float, effect_sd: float, precision, n: int,
                              draws: int = 100_000, spec: TestSpec | None = None,
                              seed: int = 0, workers: int = 1) -> PowerDistribution:
    """Power distribution at sample size ``n``.

    Each draw takes ``effect ~ Normal(effect_mean, effect_sd^2)`` (``effect_sd``
    is a standard deviation) and ``precision ~ Gamma(shape, rate)``, sets
    ``sd = 1 / sqrt(precision)`` and evaluates exact t-test power at
    ``|effect|``.  ``effect_sd = 0`` and a float ``precision`` give point
    masses.  The partition streams depend only on ``(seed, partition)``, so
    the effect and precision draws are shared across ``n`` for a given seed.
    """
    spec = spec or TestSpec()
    _validate(n, draws, spec)
    if not (effect_sd >= 0 and math.isfinite(effect_sd)):
        raise DomainError("effect_sd must be a nonnegative standard deviation")
    fixed_precision = None
    if not isinstance(precision, GammaSpec):
        fixed_precision = float(precision)
        if not fixed_precision > 0:
            raise DomainError("a fixed precision must be positive")

    def part(job):
        index, size = job
        rng = seeding.stream(seed, index)
        effect = effect_mean + effect_sd * rng.standard_normal(size)
        if fixed_precision is None:
            prec = sample_precisions(precision, size, rng)
        else:
            prec = np.full(size, fixed_precision)
        return _power_at(effect, 1.0 / np.sqrt(prec), n, spec)

    jobs = [(i, hi - lo) for i, (lo, hi) in enumerate(seeding.partitions(draws))]
    samples = np.concatenate(_map(part, jobs, workers))
    return _build(n, samples, spec)


def power_distribution_from_draws(effect_draws, precision: GammaSpec, n: int,
                                  spec: TestSpec | None = None, seed: int = 0,
                                  workers: int = 1) -> PowerDistribution:
    """As ``sample_power_distribution`` but with the effect taken from posterior draws.

    One precision is drawn per effect draw, in the draws' order.
    """
    spec = spec or TestSpec()
    effect = np.asarray(effect_draws, dtype=float).ravel()
    _validate(n, effect.size, spec)

    def part(job):
        index, lo, hi = job
        rng = seeding.stream(seed, index)
        prec = sample_precisions(precision, hi - lo, rng)
        return _power_at(effect[lo:hi], 1.0 / np.sqrt(prec), n, spec)

    jobs = [(i, lo, hi) for i, (lo, hi) in enumerate(seeding.partitions(effect.size))]
    samples = np.concatenate(_map(part, jobs, workers))
    return _build(n, samples, spec)


def pii_distribution(study_power: float, power_dist: PowerDistribution,
                     study_id: str = "") -> PiiDistribution:
    """Ratios ``study_power / power_sample`` with a central 95% interval.

    Power samples at or below 1e-12 are dropped and counted in ``n_excluded``.
    """
    if not 0.0 < study_power <= 1.0:
        raise DomainError(f"study_power must lie in (0, 1], got {study_power!r}")
    samples = power_dist.power_samples
    if samples.size == 0:
        raise DomainError("power distribution has no samples")
    keep = samples > EXCLUDE_BELOW
    if not np.any(keep):
        raise DomainError("every power sample is numerically zero")
    ratios = study_power / samples[keep]
    lo, _, hi = _quantiles(ratios)
    return PiiDistribution(study_id=study_id, sample_size=power_dist.sample_size,
                           study_power=float(study_power), ratio_samples=ratios,
                           ci_2_5=lo, ci_97_5=hi, mean_ratio=float(ratios.mean()),
                           n_excluded=int(samples.size - keep.sum()))


def study_power_estimate(study: StudySummary, spec: TestSpec | None = None) -> float:
    """Exact t-test power at the study's own observed |effect|, SD and n."""
    spec = spec or TestSpec(sidedness=Sidedness.TWO_SIDED)
    return exact_t_power(EffectScenario(abs(study.effect), study.sd, study.n), spec)
