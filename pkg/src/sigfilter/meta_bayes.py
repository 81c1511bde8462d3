"""Bayesian random-effects meta-analysis with a self-contained MCMC sampler.

Model, for studies ``i = 1..k`` with observed effect ``y_i`` and standard
error ``se_i``::

    y_i   ~ Normal(mu_i, se_i^2)
    mu_i  ~ Normal(mu, tau^2)
    mu    ~ Cauchy(0, 2.5)
    mu_i  ~ Cauchy(0, 2.5)        (dropped with ``mu_i_cauchy=False``)
    tau   ~ Cauchy(0, 2.5), tau > 0

Sampling is adaptive random-walk Metropolis-within-Gibbs.  Besides the
single-site blocks (mu), (each mu_i) and (log tau), every sweep makes two
joint moves in the non-centred frame ``eta_i = (mu_i - mu) / tau``: a common
shift of mu and all mu_i, and a rescaling of tau with the deviations
``mu_i - mu``.  Both leave the target invariant and break the funnel
coupling between tau and the mu_i when tau is small.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seeding
from .errors import DomainError

_LOG_2PI = math.log(2.0 * math.pi)
_TINY_TAU = np.finfo(float).tiny

BLOCKS = ("mu_i", "mu", "log_tau", "shift", "scale")


@dataclass(frozen=True)
class StudySummary:
    """One published comparison, on the log-ms scale."""

    study_id: str
    effect: float
    se: float
    sd: float
    n: int
    t_stat: float
    p_value: float

    def __post_init__(self):
        if not self.se > 0:
            raise DomainError(f"study {self.study_id}: se must be positive, got {self.se!r}")
        if not self.sd > 0:
            raise DomainError(f"study {self.study_id}: sd must be positive, got {self.sd!r}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"study {self.study_id}: n must be a positive integer")


@dataclass(frozen=True)
class MetaModelSpec:
    prior_scale_mu: float = 2.5
    prior_scale_tau: float = 2.5
    prior_family: str = "cauchy"
    mu_i_cauchy: bool = True
    # Only honoured in normal_test_mode: a point-mass prior on tau.
    fixed_tau: float | None = None

    def __post_init__(self):
        if not (self.prior_scale_mu > 0 and self.prior_scale_tau > 0):
            raise DomainError("prior scales must be positive")
        if self.prior_family not in ("cauchy", "normal_test_mode"):
            raise DomainError(f"unknown prior_family {self.prior_family!r}")
        if self.fixed_tau is not None:
            if self.prior_family != "normal_test_mode":
                raise DomainError("fixed_tau is only available in normal_test_mode")
            if not self.fixed_tau > 0:
                raise DomainError("fixed_tau must be positive")

    @property
    def test_mode(self) -> bool:
        return self.prior_family == "normal_test_mode"


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    iterations: int = 4000
    warmup: int | None = None
    seed: int = 0
    proposal_scales: dict | None = None
    adapt_every: int = 50

    def __post_init__(self):
        if self.chains < 1 or self.iterations < 1:
            raise DomainError("chains and iterations must be positive")
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.iterations // 2)
        if not 0 <= self.warmup < self.iterations:
            raise DomainError("warmup must satisfy 0 <= warmup < iterations")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")


@dataclass
class PosteriorDraws:
    """Retained (post-warmup) draws, indexed ``[chain, draw]``."""

    study_ids: list[str]
    mu: np.ndarray
    mu_i: np.ndarray  # [chain, draw, study]
    tau: np.ndarray
    log_post: np.ndarray
    acceptance: dict[str, np.ndarray]  # block -> per-chain rate (per-study for mu_i)
    proposal_scales: list[dict] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.mu.shape[0]

    @property
    def n_draws(self) -> int:
        return self.mu.shape[1]

    def param(self, name) -> np.ndarray:
        """``[chain, draw]`` array for ``"mu"``, ``"tau"`` or ``"mu_i[j]"`` / ``("mu_i", j)``."""
        if isinstance(name, tuple):
            return self.mu_i[:, :, name[1]]
        if name in ("mu", "tau"):
            return getattr(self, name)
        if name.startswith("mu_i[") and name.endswith("]"):
            return self.mu_i[:, :, int(name[5:-1])]
        if name in self.study_ids:
            return self.mu_i[:, :, self.study_ids.index(name)]
        raise KeyError(name)

    def param_names(self) -> list[str]:
        return ["mu", "tau"] + [f"mu_i[{j}]" for j in range(len(self.study_ids))]


# --------------------------------------------------------------------------
# densities
# --------------------------------------------------------------------------

def _norm_logpdf(x, m, s):
    z = (x - m) / s
    return -0.5 * z * z - np.log(s) - 0.5 * _LOG_2PI


def _cauchy_logpdf(x, scale):
    z = x / scale
    return -np.log1p(z * z) - math.log(math.pi * scale)


def _arrays(studies: Sequence[StudySummary]):
    y = np.array([s.effect for s in studies], dtype=float)
    se = np.array([s.se for s in studies], dtype=float)
    return y, se


class _Target:
    """Log posterior pieces for one dataset, shared by the sampler and ``log_posterior``."""

    def __init__(self, y, se, spec: MetaModelSpec):
        self.y, self.se, self.spec = y, se, spec
        self.k = y.size

    def prior_mu(self, mu):
        s = self.spec.prior_scale_mu
        if self.spec.test_mode:
            return _norm_logpdf(mu, 0.0, s)
        return _cauchy_logpdf(mu, s)

    def prior_mu_i(self, m):
        # elementwise
        if self.spec.test_mode or not self.spec.mu_i_cauchy:
            return np.zeros_like(m)
        return _cauchy_logpdf(m, self.spec.prior_scale_mu)

    def prior_tau(self, tau):
        if self.spec.fixed_tau is not None:
            return 0.0
        s = self.spec.prior_scale_tau
        if self.spec.test_mode:
            return math.log(2.0) + _norm_logpdf(tau, 0.0, s)
        return math.log(2.0) + _cauchy_logpdf(tau, s)

    def loglik(self, m):
        return _norm_logpdf(self.y, m, self.se)

    def hier(self, m, mu, tau):
        return _norm_logpdf(m, mu, tau)

    def total(self, mu, m, tau) -> float:
        if not tau > 0:
            return -math.inf
        return float(np.sum(self.loglik(m)) + np.sum(self.hier(m, mu, tau))
                     + self.prior_mu(mu) + np.sum(self.prior_mu_i(m)) + self.prior_tau(tau))


def log_posterior(params, studies: Sequence[StudySummary], spec: MetaModelSpec | None = None) -> float:
    """Unnormalized log posterior at ``params = (mu, mu_i, tau)``.

    All density factors carry their normalizing constants; ``tau <= 0``
    gives ``-inf``.
    """
    spec = spec or MetaModelSpec()
    mu, m, tau = params
    m = np.asarray(m, dtype=float)
    y, se = _arrays(studies)
    if m.shape != y.shape:
        raise DomainError(f"expected {y.size} study effects, got {m.size}")
    return _Target(y, se, spec).total(float(mu), m, float(tau))


# --------------------------------------------------------------------------
# sampler
# --------------------------------------------------------------------------

_TARGET_ACCEPT = 0.35


def _adapt(log_scale, rate, batch):
    step = min(1.0, 3.0 / math.sqrt(batch))
    return log_scale + step * (rate - _TARGET_ACCEPT)


def _initial_scales(y, se):
    return {
        "mu_i": se.copy(),
        "mu": float(np.mean(se)),
        "log_tau": 0.5,
        "shift": float(np.mean(se)) / math.sqrt(y.size),
        "scale": 0.5,
    }


def _run_chain(target: _Target, cfg: McmcConfig, chain: int):
    y, se, k = target.y, target.se, target.k
    fixed_tau = target.spec.fixed_tau
    rng = seeding.stream(cfg.seed, chain)
    n_iter, warm = cfg.iterations, cfg.warmup

    spread = float(np.std(y)) + float(np.mean(se))
    mu = float(np.mean(y) + spread * rng.standard_normal())
    m = y + se * rng.standard_normal(k)
    if fixed_tau is None:
        tau = float(np.exp(math.log(spread) + rng.standard_normal()))
    else:
        tau = float(fixed_tau)
        rng.standard_normal()  # keep the stream layout identical across modes

    base = _initial_scales(y, se)
    if cfg.proposal_scales:
        base.update({kk: (np.asarray(v, dtype=float).copy() if kk == "mu_i" else float(v))
                     for kk, v in cfg.proposal_scales.items()})
    log_s = {b: np.log(base[b]) for b in BLOCKS}

    # random numbers for the whole run, drawn up front in a fixed layout
    eps = rng.standard_normal((n_iter, k + 4))
    logu = np.log(rng.random((n_iter, k + 4)))

    keep = n_iter - warm
    out_mu = np.empty(keep)
    out_tau = np.empty(keep)
    out_m = np.empty((keep, k))
    acc_batch = {b: (np.zeros(k) if b == "mu_i" else 0.0) for b in BLOCKS}
    batch_no = 0

    ll = target.loglik(m)
    pri_m = target.prior_mu_i(m)
    for it in range(n_iter):
        e, lu = eps[it], logu[it]
        s = {b: np.exp(log_s[b]) for b in BLOCKS}

        # (each mu_i): conditionally independent given (mu, tau), updated together
        prop = m + s["mu_i"] * e[:k]
        ll_p = target.loglik(prop)
        pri_p = target.prior_mu_i(prop)
        ratio = (ll_p + target.hier(prop, mu, tau) + pri_p) - (ll + target.hier(m, mu, tau) + pri_m)
        ok = lu[:k] < ratio
        m = np.where(ok, prop, m)
        ll = np.where(ok, ll_p, ll)
        pri_m = np.where(ok, pri_p, pri_m)
        acc_batch["mu_i"] += ok

        # (mu) given mu_i, tau
        mu_p = mu + s["mu"] * e[k]
        ratio = (np.sum(target.hier(m, mu_p, tau)) + target.prior_mu(mu_p)
                 - np.sum(target.hier(m, mu, tau)) - target.prior_mu(mu))
        if lu[k] < ratio:
            mu = mu_p
            acc_batch["mu"] += 1

        # (log tau) given mu, mu_i; the +log tau term is the Jacobian
        if fixed_tau is None:
            tau_p = tau * math.exp(s["log_tau"] * e[k + 1])
            if tau_p > _TINY_TAU:
                ratio = (np.sum(target.hier(m, mu, tau_p)) + target.prior_tau(tau_p) + math.log(tau_p)
                         - np.sum(target.hier(m, mu, tau)) - target.prior_tau(tau) - math.log(tau))
                if lu[k + 1] < ratio:
                    tau = tau_p
                    acc_batch["log_tau"] += 1

        # joint shift of mu and every mu_i (unit Jacobian; hierarchical term unchanged)
        d = s["shift"] * e[k + 2]
        prop = m + d
        ll_p = target.loglik(prop)
        pri_p = target.prior_mu_i(prop)
        ratio = (np.sum(ll_p) + np.sum(pri_p) + target.prior_mu(mu + d)
                 - np.sum(ll) - np.sum(pri_m) - target.prior_mu(mu))
        if lu[k + 2] < ratio:
            mu += d
            m, ll, pri_m = prop, ll_p, pri_p
            acc_batch["shift"] += 1

        # joint rescale of tau and the deviations mu_i - mu; Jacobian tau^(k+1)
        if fixed_tau is None:
            f = math.exp(s["scale"] * e[k + 3])
            tau_p = tau * f
            if tau_p > _TINY_TAU:
                prop = mu + (m - mu) * f
                ll_p = target.loglik(prop)
                pri_p = target.prior_mu_i(prop)
                ratio = (np.sum(ll_p) + np.sum(target.hier(prop, mu, tau_p)) + np.sum(pri_p)
                         + target.prior_tau(tau_p)
                         - np.sum(ll) - np.sum(target.hier(m, mu, tau)) - np.sum(pri_m)
                         - target.prior_tau(tau)
                         + (k + 1) * math.log(f))
                if lu[k + 3] < ratio:
                    tau, m, ll, pri_m = tau_p, prop, ll_p, pri_p
                    acc_batch["scale"] += 1

        if it < warm:
            if (it + 1) % cfg.adapt_every == 0:
                batch_no += 1
                for b in BLOCKS:
                    log_s[b] = _adapt(log_s[b], acc_batch[b] / cfg.adapt_every, batch_no)
                    acc_batch[b] = acc_batch[b] * 0
            if it + 1 == warm:
                acc_batch = {b: acc_batch[b] * 0 for b in BLOCKS}
        else:
            j = it - warm
            out_mu[j], out_tau[j], out_m[j] = mu, tau, m

    rates = {b: acc_batch[b] / keep for b in BLOCKS}
    if fixed_tau is not None:
        rates["log_tau"] = rates["scale"] = float("nan")
    scales = {b: (np.exp(log_s[b]).tolist() if b == "mu_i" else float(np.exp(log_s[b]))) for b in BLOCKS}
    return out_mu, out_m, out_tau, rates, scales


def fit_meta(studies: Sequence[StudySummary], spec: MetaModelSpec | None = None,
             mcmc: McmcConfig | None = None, workers: int = 1) -> PosteriorDraws:
    """Sample the random-effects posterior.

    Each chain uses its own stream derived from ``(seed, chain index)``;
    chains are merged by index, so output does not depend on ``workers``.
    """
    spec = spec or MetaModelSpec()
    mcmc = mcmc or McmcConfig()
    studies = list(studies)
    if len(studies) < 2:
        raise DomainError("a meta-analysis needs at least 2 studies")
    for s in studies:
        if not (s.se > 0 and math.isfinite(s.se)):
            raise DomainError(f"study {s.study_id}: se must be positive and finite")
    y, se = _arrays(studies)
    target = _Target(y, se, spec)

    if workers > 1 and mcmc.chains > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda c: _run_chain(target, mcmc, c), range(mcmc.chains)))
    else:
        runs = [_run_chain(target, mcmc, c) for c in range(mcmc.chains)]

    mu = np.stack([r[0] for r in runs])
    mu_i = np.stack([r[1] for r in runs])
    tau = np.stack([r[2] for r in runs])
    log_post = np.array([[target.total(mu[c, d], mu_i[c, d], tau[c, d])
                          for d in range(mu.shape[1])] for c in range(mu.shape[0])])
    acceptance = {b: np.stack([np.asarray(r[3][b], dtype=float) for r in runs]) for b in BLOCKS}
    return PosteriorDraws(
        study_ids=[s.study_id for s in studies], mu=mu, mu_i=mu_i, tau=tau,
        log_post=log_post, acceptance=acceptance, proposal_scales=[r[4] for r in runs],
    )


# --------------------------------------------------------------------------
# diagnostics and summaries
# --------------------------------------------------------------------------

def _chains_of(draws, param) -> np.ndarray:
    if isinstance(draws, PosteriorDraws):
        return draws.param(param)
    return np.asarray(draws, dtype=float)


def rhat(draws, param="mu") -> float:
    """Split-chain potential scale reduction factor.

    ``draws`` is a ``PosteriorDraws`` (with ``param`` selecting a parameter) or
    a raw ``[chain, draw]`` array.
    """
    x = _chains_of(draws, param)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError("R-hat needs at least 2 chains")
    if x.shape[1] < 4:
        raise DomainError("R-hat needs at least 4 draws per chain to split")
    half = x.shape[1] // 2
    split = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    n = split.shape[1]
    chain_means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean()
    b = n * chain_means.var(ddof=1)
    if w == 0.0:
        return 1.0 if b == 0.0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def effective_sample_size(draws, param="mu") -> float:
    """Multi-chain ESS using Geyer's initial monotone sequence on the averaged autocorrelation."""
    x = _chains_of(draws, param)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4:
        return float(m * n)
    centred = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    if w == 0.0:
        return float(m * n)
    var_plus = (n - 1) / n * w + (x.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative, made monotone
    pairs = rho[:-1:2] + rho[1::2]
    stop = np.argmax(pairs < 0) if np.any(pairs < 0) else pairs.size
    pairs = np.minimum.accumulate(pairs[:stop]) if stop else pairs[:1]
    tau_int = -1.0 + 2.0 * float(np.sum(pairs))
    return float(m * n / max(tau_int, 1.0 / math.log10(m * n + 10)))


def mcse_mean(draws, param="mu") -> float:
    x = _chains_of(draws, param)
    return float(np.std(x, ddof=1) / math.sqrt(effective_sample_size(x)))


@dataclass(frozen=True)
class ParamSummary:
    """Posterior summary of one scalar parameter.

    Quantiles use linear interpolation between order statistics
    (``numpy.quantile(..., method="linear")``).
    """

    mean: float
    sd: float
    q2_5: float
    q50: float
    q97_5: float
    hist_edges: tuple[float, ...]
    hist_counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd, "q2_5": self.q2_5, "q50": self.q50,
                "q97_5": self.q97_5, "hist_edges": list(self.hist_edges),
                "hist_counts": list(self.hist_counts)}


def summarize_samples(x, bins: int = 40) -> ParamSummary:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("cannot summarize an empty sample")
    q = np.quantile(x, [0.025, 0.5, 0.975], method="linear")
    counts, edges = np.histogram(x, bins=bins)
    if x.min() == x.max():
        mean, sd = float(x[0]), 0.0  # avoid summation round-off on constant draws
    else:
        mean, sd = float(x.mean()), float(x.std(ddof=1))
    return ParamSummary(mean=mean, sd=sd, q2_5=float(q[0]), q50=float(q[1]),
                        q97_5=float(q[2]), hist_edges=tuple(map(float, edges)),
                        hist_counts=tuple(map(int, counts)))


def summarize(draws: PosteriorDraws, bins: int = 40) -> dict[str, ParamSummary]:
    """Per-parameter summaries pooled over chains, keyed ``mu``, ``tau``, ``mu_i[j]``."""
    return {name: summarize_samples(draws.param(name), bins=bins) for name in draws.param_names()}


def conjugate_mu_posterior(studies: Sequence[StudySummary], prior_sd: float, tau: float) -> tuple[float, float]:
    """Closed-form posterior mean and SD of mu for a Normal(0, prior_sd^2) prior and known tau.

    Integrating out mu_i gives ``y_i | mu ~ Normal(mu, se_i^2 + tau^2)``.
    """
    y, se = _arrays(studies)
    w = 1.0 / (se * se + tau * tau)
    prec = 1.0 / prior_sd**2 + w.sum()
    return float((w * y).sum() / prec), float(1.0 / math.sqrt(prec))
