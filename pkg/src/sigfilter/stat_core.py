"""Deterministic statistical kernels.

Standard-normal distribution functions, the distribution of the p-value
as a random variable, z-based (post-hoc) power, a noncentral t evaluator,
exact t-test power and the paired t-test.

Everything here is a pure function.  Scalar inputs return Python floats;
array inputs (where noted) return numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .errors import DegenerateSampleError, DomainError

__all__ = [
    "Family",
    "Sidedness",
    "TestSpec",
    "TestResult",
    "EffectScenario",
    "std_normal_cdf",
    "std_normal_quantile",
    "p_value_pdf",
    "p_value_cdf",
    "p_from_z",
    "power_from_z",
    "z_test_power",
    "noncentral_t_cdf",
    "noncentral_t_sf",
    "t_critical",
    "t_test_power",
    "exact_t_power",
    "paired_t_test",
    "paired_t_pvalues",
    "ks_uniform_distance",
]


class Family(str, Enum):
    Z = "z"
    ONE_SAMPLE_T = "one_sample_t"
    PAIRED_T = "paired_t"


class Sidedness(str, Enum):
    GREATER = "one_sided_gt"
    LESS = "one_sided_lt"
    TWO_SIDED = "two_sided"


@dataclass(frozen=True)
class TestSpec:
    """Test family, direction, Type I error rate and null value."""

    __test__ = False  # keep pytest from collecting this class

    family: Family = Family.PAIRED_T
    sidedness: Sidedness = Sidedness.TWO_SIDED
    alpha: float = 0.05
    mu0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "sidedness", Sidedness(self.sidedness))
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not math.isfinite(self.mu0):
            raise DomainError(f"mu0 must be finite, got {self.mu0!r}")

    @property
    def is_t(self) -> bool:
        return self.family is not Family.Z


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    t_stat: float
    df: int
    effect: float
    se: float
    sd: float
    n: int
    p_value: float


@dataclass(frozen=True)
class EffectScenario:
    """True effect ``mu``, SD of one difference score ``sigma``, sample size ``n``."""

    mu: float
    sigma: float
    n: int

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu!r}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"sigma must be positive and finite, got {self.sigma!r}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")

    def delta(self, mu0: float = 0.0) -> float:
        """True standardized effect ``(mu - mu0) * sqrt(n) / sigma``."""
        return (self.mu - mu0) * math.sqrt(self.n) / self.sigma


def _as_float_or_array(x):
    arr = np.asarray(x, dtype=float)
    return (float(arr), True) if arr.ndim == 0 else (arr, False)


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")


def _out(value, scalar):
    return float(value) if scalar else value


# --------------------------------------------------------------------------
# standard normal
# --------------------------------------------------------------------------

def std_normal_cdf(x):
    """Phi(x).  Accepts a scalar or an array."""
    arr, scalar = _as_float_or_array(x)
    _require_finite("x", arr)
    return _out(special.ndtr(arr), scalar)


def std_normal_quantile(p):
    """Inverse of Phi: the p-th quantile of Normal(0, 1)."""
    arr, scalar = _as_float_or_array(p)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("p must lie in the open interval (0, 1)")
    return _out(special.ndtri(arr), scalar)


def _upper_z(p):
    # the (1 - p)th percentile, computed as -ndtri(p) to keep precision for small p
    return -special.ndtri(p)


# --------------------------------------------------------------------------
# the p-value as a random variable
# --------------------------------------------------------------------------

def p_value_pdf(p, delta):
    """Density of the one-sided p-value when the true standardized effect is ``delta``.

    ``phi(Z_p - delta) / phi(Z_p)`` with ``Z_p`` the upper-``p`` normal point;
    expanded to ``exp(Z_p * delta - delta**2 / 2)`` to avoid 0/0 in the tails.
    """
    arr, scalar = _as_float_or_array(p)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("p_value_pdf is defined on the open interval (0, 1)")
    d = np.asarray(delta, dtype=float)
    _require_finite("delta", d)
    zp = _upper_z(arr)
    return _out(np.exp(zp * d - 0.5 * d * d), scalar and d.ndim == 0)


def p_value_cdf(p, delta):
    """P(P <= p) = 1 - Phi(Z_p - delta)."""
    arr, scalar = _as_float_or_array(p)
    if not np.all((arr >= 0.0) & (arr <= 1.0)):
        raise DomainError("p must lie in [0, 1]")
    d = np.asarray(delta, dtype=float)
    _require_finite("delta", d)
    with np.errstate(divide="ignore"):
        zp = _upper_z(arr)  # +inf at p=0, -inf at p=1
    return _out(special.ndtr(d - zp), scalar and d.ndim == 0)


def p_from_z(z, two_sided: bool = False):
    """p-value of an observed z under the null.

    One-sided (upper tail) by default: ``1 - Phi(z)``.  With ``two_sided=True``
    returns ``2 * (1 - Phi(|z|))`` clipped to [0, 1].
    """
    arr, scalar = _as_float_or_array(z)
    _require_finite("z", arr)
    if two_sided:
        return _out(np.minimum(2.0 * special.ndtr(-np.abs(arr)), 1.0), scalar)
    return _out(special.ndtr(-arr), scalar)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")


def _z_crit(tail):
    # same expression as std_normal_quantile(1 - tail), so power at that point is exactly 0.5
    return special.ndtri(1.0 - tail)


def power_from_z(z_obs, alpha: float = 0.05, two_sided: bool = False):
    """Post-hoc power obtained by plugging an observed z into the power formula.

    One-sided: ``1 - Phi(z_alpha - z_obs)``, which equals exactly 0.5 at
    ``z_obs = z_alpha``.  The two-sided variant uses ``z_{alpha/2}`` and adds
    the opposite tail: ``Phi(|z| - z_{a/2}) + Phi(-|z| - z_{a/2})``.
    """
    _check_alpha(alpha)
    arr, scalar = _as_float_or_array(z_obs)
    if np.any(np.isnan(arr)):
        raise DomainError("z_obs must not be NaN")
    if two_sided:
        crit = _z_crit(alpha / 2.0)
        a = np.abs(arr)
        return _out(special.ndtr(a - crit) + special.ndtr(-a - crit), scalar)
    crit = _z_crit(alpha)
    # Phi(z - z_alpha) is the same quantity; written this way Phi(0) = 0.5 exactly.
    return _out(special.ndtr(arr - crit), scalar)


def z_test_power(delta, alpha: float, sidedness: Sidedness):
    """Power of a z test when the true standardized effect is ``delta``."""
    _check_alpha(alpha)
    sidedness = Sidedness(sidedness)
    d, scalar = _as_float_or_array(delta)
    if sidedness is Sidedness.GREATER:
        out = special.ndtr(d - _z_crit(alpha))
    elif sidedness is Sidedness.LESS:
        out = special.ndtr(-d - _z_crit(alpha))
    else:
        c = _z_crit(alpha / 2.0)
        out = special.ndtr(d - c) + special.ndtr(-d - c)
    return _out(out, scalar)


# --------------------------------------------------------------------------
# noncentral t
# --------------------------------------------------------------------------
#
# T = (Z + ncp) / S with S = sqrt(V / df), V ~ chi-square(df), independent of Z,
# so P(T <= x) = E[Phi(x S - ncp)].  The expectation is taken by composite
# Gauss-Legendre quadrature over the central 1 - 2e-15 mass of S.  The
# integrand switches from 0 to 1 over a width of about 1/|x| in s, so the
# panel count grows with |x|; nodes and weights are cached per (df, panels).

_GL_ORDER = 16
_MIN_PANELS = 8
_MAX_PANELS = 2048
_PANELS_PER_UNIT = 1.0  # panels per unit of (support width * |x|)
_TAIL_MASS = 1e-15
_ROW_CHUNK = 4096


@lru_cache(maxsize=64)
def _chi_support(df: int) -> tuple[float, float]:
    lo = math.sqrt(stats.chi2.ppf(_TAIL_MASS, df) / df)
    hi = math.sqrt(stats.chi2.isf(_TAIL_MASS, df) / df)
    return lo, hi


def _panel_count(df: int, xmax: float) -> int:
    lo, hi = _chi_support(df)
    need = math.ceil(_PANELS_PER_UNIT * (hi - lo) * xmax)
    # round up to a power of two so nearby |x| share a cached rule
    return min(_MAX_PANELS, max(_MIN_PANELS, 1 << max(0, need - 1).bit_length()))


@lru_cache(maxsize=512)
def _chi_rule(df: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = _chi_support(df)
    xg, wg = np.polynomial.legendre.leggauss(_GL_ORDER)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    # density of S: f_S(s) = 2 df s f_V(df s^2)
    log_f = math.log(2.0 * df) + np.log(s) + stats.chi2.logpdf(df * s * s, df)
    w = w * np.exp(log_f)
    w /= w.sum()
    s.flags.writeable = False
    w.flags.writeable = False
    return s, w


def _check_df(df) -> int:
    if int(df) != df or df < 1:
        raise DomainError(f"df must be an integer >= 1, got {df!r}")
    return int(df)


def _nct_tail(x, df, ncp, upper: bool):
    df = _check_df(df)
    xa = np.asarray(x, dtype=float)
    na = np.asarray(ncp, dtype=float)
    _require_finite("x", xa)
    _require_finite("ncp", na)
    scalar = xa.ndim == 0 and na.ndim == 0
    xb, nb = np.broadcast_arrays(xa, na)
    shape = xb.shape
    xf, nf = xb.ravel(), nb.ravel()
    xmax = float(np.max(np.abs(xf))) if xf.size else 0.0
    s, w = _chi_rule(df, _panel_count(df, xmax))
    out = np.empty(xf.size)
    for lo in range(0, xf.size, _ROW_CHUNK):
        hi = lo + _ROW_CHUNK
        arg = xf[lo:hi, None] * s[None, :] - nf[lo:hi, None]
        if upper:
            arg = -arg
        out[lo:hi] = special.ndtr(arg) @ w
    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if scalar else out.reshape(shape)


def noncentral_t_cdf(x, df: int, ncp):
    """CDF of the noncentral t distribution; vectorized over ``x`` and ``ncp``.

    Absolute error is below 1e-9 across the parameter ranges used here
    (checked against an independent evaluator and a simulation oracle).
    """
    return _nct_tail(x, df, ncp, upper=False)


def noncentral_t_sf(x, df: int, ncp):
    """Upper tail ``P(T > x)``, integrated directly rather than as ``1 - cdf``."""
    return _nct_tail(x, df, ncp, upper=True)


# --------------------------------------------------------------------------
# t-test power
# --------------------------------------------------------------------------

def t_critical(alpha: float, df: int, sidedness: Sidedness) -> float:
    """Positive critical value of the central t for the given sidedness."""
    _check_alpha(alpha)
    tail = alpha / 2.0 if Sidedness(sidedness) is Sidedness.TWO_SIDED else alpha
    return float(stats.t.isf(tail, _check_df(df)))


def t_test_power(ncp, df: int, alpha: float, sidedness: Sidedness):
    """Rejection probability of a t test with noncentrality ``ncp``.

    Two-sided power sums both tails of the noncentral distribution.
    Vectorized over ``ncp``.
    """
    sidedness = Sidedness(sidedness)
    crit = t_critical(alpha, df, sidedness)
    if sidedness is Sidedness.GREATER:
        return noncentral_t_sf(crit, df, ncp)
    if sidedness is Sidedness.LESS:
        return noncentral_t_cdf(-crit, df, ncp)
    return noncentral_t_sf(crit, df, ncp) + noncentral_t_cdf(-crit, df, ncp)


def exact_t_power(scenario: EffectScenario, spec: TestSpec) -> float:
    """Exact power of a one-sample (or paired) t test for a true scenario."""
    if not spec.is_t:
        raise DomainError("exact_t_power needs a t family; use z_test_power for z tests")
    if scenario.n < 2:
        raise DomainError(f"a t test needs n >= 2, got {scenario.n}")
    ncp = scenario.delta(spec.mu0)
    return float(t_test_power(ncp, scenario.n - 1, spec.alpha, spec.sidedness))


# --------------------------------------------------------------------------
# tests on data
# --------------------------------------------------------------------------

def _p_values(stat, df: int, spec: TestSpec) -> np.ndarray:
    dist = stats.norm if spec.family is Family.Z else stats.t(df)
    if spec.sidedness is Sidedness.GREATER:
        return dist.sf(stat)
    if spec.sidedness is Sidedness.LESS:
        return dist.cdf(stat)
    return np.minimum(1.0, 2.0 * dist.sf(np.abs(stat)))


def _p_value(stat: float, df: int, spec: TestSpec) -> float:
    return float(_p_values(stat, df, spec))


def paired_t_test(diffs, spec: TestSpec | None = None) -> TestResult:
    """One-sample t test on difference scores (the paired t test).

    For ``spec.family == "z"`` the same statistic is referred to the normal
    distribution instead of Student's t.
    """
    spec = spec or TestSpec()
    x = np.asarray(diffs, dtype=float).ravel()
    if x.size < 2:
        raise DomainError(f"need at least 2 differences, got {x.size}")
    _require_finite("diffs", x)
    n = int(x.size)
    effect = float(x.mean())
    sd = float(x.std(ddof=1))
    if sd == 0.0 or np.all(x == x[0]):
        raise DegenerateSampleError("all differences are identical; sd is zero")
    se = sd / math.sqrt(n)
    t = (effect - spec.mu0) / se
    return TestResult(t_stat=t, df=n - 1, effect=effect, se=se, sd=sd, n=n,
                      p_value=_p_value(t, n - 1, spec))


def paired_t_pvalues(diffs, spec: TestSpec | None = None) -> np.ndarray:
    """Row-wise ``paired_t_test(row, spec).p_value`` for a 2-D array of difference scores."""
    spec = spec or TestSpec()
    x = np.asarray(diffs, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DomainError("need a 2-D array with at least 2 differences per row")
    _require_finite("diffs", x)
    n = x.shape[1]
    sd = x.std(axis=1, ddof=1)
    if np.any(sd == 0.0):
        raise DegenerateSampleError("a row has identical differences; sd is zero")
    t = (x.mean(axis=1) - spec.mu0) / (sd / math.sqrt(n))
    return np.asarray(_p_values(t, n - 1, spec), dtype=float)


def ks_uniform_distance(pvals) -> float:
    """Kolmogorov-Smirnov distance between the ECDF of ``pvals`` and Uniform(0, 1)."""
    x = np.sort(np.asarray(pvals, dtype=float).ravel())
    if x.size == 0:
        raise DomainError("need at least one p-value")
    if not np.all((x >= 0.0) & (x <= 1.0)):
        raise DomainError("p-values must lie in [0, 1]")
    m = x.size
    i = np.arange(1, m + 1)
    d_plus = np.max(i / m - x)
    d_minus = np.max(x - (i - 1) / m)
    return float(max(d_plus, d_minus))
