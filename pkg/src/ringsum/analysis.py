"""Closed-form utility/variance bounds, differential-privacy accounting, and
the structural oracles used to verify the simulator independently.

Privacy accounting is kept in log space throughout: geometric schedules have
per-step budgets growing like phi**(-k), which overflow float64 long before
the K values the composition identity is checked at.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ConfigError,
    Distribution,
    Family,
    NoiseSchedule,
    ProtocolConfig,
    RingSumError,
)
from .noise import NoiseSource


class MixedFamilyError(RingSumError, ValueError):
    """Aggregates requested over schedules of different families."""


class UnsupportedDistributionError(RingSumError, ValueError):
    """Privacy guarantee requested for a distribution it is not proven for."""


class InsufficientSamplesError(RingSumError, RuntimeError):
    """Density-ratio audit had no histogram bin with enough mass on both sides."""


# -- schedule aggregates ----------------------------------------------------


@dataclass(frozen=True)
class ScheduleAggregates:
    family: Family
    c_M: float
    c_m: float
    d_M: float | None = None
    phi_M: float | None = None
    phi_m: float | None = None
    pairs: tuple[tuple[float, float], ...] = ()  # (c_i, phi_i), geometric only

    @classmethod
    def from_schedules(cls, schedules) -> "ScheduleAggregates":
        schedules = list(schedules)
        if not schedules:
            raise MixedFamilyError("no schedules given")
        families = {s.family for s in schedules}
        if len(families) != 1:
            raise MixedFamilyError(f"mixed schedule families: {families}")
        family = schedules[0].family
        cs = [s.c for s in schedules]
        if family is Family.HARMONIC:
            return cls(family, max(cs), min(cs), d_M=max(s.d for s in schedules))
        phis = [s.phi for s in schedules]
        return cls(
            family,
            max(cs),
            min(cs),
            phi_M=max(phis),
            phi_m=min(phis),
            pairs=tuple((s.c, s.phi) for s in schedules),
        )


def utility_bound(agg: ScheduleAggregates, n: int) -> float:
    """Asymptotic bound on E sum_i |y_i(k) - sum_j s_j|."""
    if n <= 2:
        raise ConfigError(f"bounds assume more than 2 nodes, got {n}")
    if agg.family is Family.HARMONIC:
        return agg.c_M * math.pi * n * math.sqrt(n / 6.0)
    return max(c * n * math.sqrt(n / (1.0 - phi**2)) for c, phi in agg.pairs)


def variance_bound(agg: ScheduleAggregates, n: int) -> float:
    """Asymptotic bound on sum_i var(y_i(k))."""
    if n <= 2:
        raise ConfigError(f"bounds assume more than 2 nodes, got {n}")
    if agg.family is Family.HARMONIC:
        return agg.c_M**2 * math.pi**2 * n**2 / 3.0
    return max(2.0 * n**2 * c**2 / (1.0 - phi**2) for c, phi in agg.pairs)


# -- privacy budget ----------------------------------------------------------


def _logsumexp(arr: np.ndarray) -> float:
    m = float(np.max(arr))
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.fsum(np.exp(arr - m)))


@dataclass(frozen=True)
class PrivacyBudget:
    """Per-step budgets eps_0..eps_{K-1} and their composed total.

    `total` is the closed-form composition; `log_per_step` carries the exact
    per-step sequence even where individual terms overflow. For harmonic
    schedules with d_M = 0 the engine's k = 0 scale substitution adds one
    delta / c_m term, reported separately as `total_start_shifted`.
    """

    family: Family
    delta: float
    K: int
    log_per_step: np.ndarray
    total: float
    log_total: float
    total_start_shifted: float | None = None

    @property
    def per_step(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_per_step)

    def log_composed_total(self) -> float:
        """log of sum_k eps_k, summed with compensated accumulation."""
        return _logsumexp(self.log_per_step)

    def composed_total(self) -> float:
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_composed_total()))


def epsilon_total(
    agg: ScheduleAggregates, delta: float, K: int, distribution: Distribution
) -> PrivacyBudget:
    """Theorem-level (epsilon, delta, K) budget for K-step execution.

    Only Laplace noise carries the guarantee; anything else is refused rather
    than silently extrapolated.
    """
    if distribution is not Distribution.LAPLACE:
        raise UnsupportedDistributionError(
            f"the differential-privacy guarantee is proven for Laplace noise only, "
            f"got {distribution.value}"
        )
    if delta < 0:
        raise ConfigError(f"adjacency radius must be nonnegative, got {delta}")
    if K < 1:
        raise ConfigError(f"step count must be >= 1, got {K}")

    ks = np.arange(K, dtype=np.float64)
    log_base = math.log(delta / agg.c_m) if delta > 0 else -math.inf
    shifted = None
    with np.errstate(divide="ignore"):
        if agg.family is Family.HARMONIC:
            log_per_step = log_base + np.log(ks + agg.d_M)
            total = delta / agg.c_m * K * ((K - 1) / 2.0 + agg.d_M)
            arg = K * ((K - 1) / 2.0 + agg.d_M)
            log_total = log_base + (math.log(arg) if arg > 0 else -math.inf)
            if agg.d_M == 0:
                shifted = total + delta / agg.c_m
        else:
            phi = agg.phi_m
            log_per_step = log_base - ks * math.log(phi)
            log_total = (
                log_base
                + math.log1p(-(phi**K))
                - (K - 1) * math.log(phi)
                - math.log1p(-phi)
            )
            with np.errstate(over="ignore"):
                total = float(np.exp(log_total))
    return PrivacyBudget(
        family=agg.family,
        delta=delta,
        K=K,
        log_per_step=log_per_step,
        total=total,
        log_total=log_total,
        total_start_shifted=shifted,
    )


# -- empirical DP audit -------------------------------------------------------


@dataclass
class AuditResult:
    observed: float            # sum over steps of the per-step observed max log ratio
    per_step: list[float]
    epsilon: float             # closed-form budget for the audited K
    noise_floor: float         # rough scale of pure estimation noise in `observed`
    bins_used: int
    bins_skipped: int
    samples: int


def _sample_traces(
    secrets: np.ndarray,
    schedules,
    dist: Distribution,
    src: NoiseSource,
    K: int,
    samples: int,
    trial_offset: int,
) -> np.ndarray:
    """Adversary-observable messages d_i(k), shape (K, n, samples)."""
    n = len(secrets)
    nodes = np.arange(1, n + 1, dtype=np.uint64)[None, :]
    trials = (np.arange(samples, dtype=np.uint64) + np.uint64(trial_offset))[:, None]
    x = np.tile(secrets, (samples, 1))
    out = np.empty((K, n, samples))
    for k in range(K):
        scales = np.array([s.scale(k) for s in schedules])[None, :]
        beta = src.sample(nodes, k, trials, scales, dist)
        d = x - beta
        out[k] = d.T
        x = beta + np.roll(d, 1, axis=1)
    return out


def _coordinate_log_ratio(a: np.ndarray, b: np.ndarray, min_bin_count: int):
    """Max |log density ratio| between two samples, histogram-estimated."""
    both = np.concatenate([a, b])
    q75, q25 = np.percentile(both, [75, 25])
    iqr = q75 - q25
    lo, hi = float(both.min()), float(both.max())
    if iqr <= 0 or hi <= lo:
        return 0.0, 0.0, 0, 1
    width = 2.0 * iqr * both.size ** (-1.0 / 3.0)  # Freedman-Diaconis
    nbins = int(np.clip(math.ceil((hi - lo) / width), 1, 2000))
    edges = np.linspace(lo, hi, nbins + 1)
    ca, _ = np.histogram(a, bins=edges)
    cb, _ = np.histogram(b, bins=edges)
    mask = (ca >= min_bin_count) & (cb >= min_bin_count)
    used = int(mask.sum())
    if used == 0:
        return 0.0, 0.0, 0, nbins
    log_ratio = np.log(ca[mask] / len(a)) - np.log(cb[mask] / len(b))
    i = int(np.argmax(np.abs(log_ratio)))
    stderr = math.sqrt(1.0 / ca[mask][i] + 1.0 / cb[mask][i])
    return float(np.abs(log_ratio[i])), stderr, used, nbins - used


def dp_audit(
    config: ProtocolConfig,
    delta: float,
    K: int,
    samples: int,
    adjacent_index: int = 0,
    min_bin_count: int | None = None,
) -> AuditResult:
    """Estimate the worst observable log-likelihood ratio between traces of
    two delta-adjacent secret vectors.

    Per-coordinate histograms (marginals of the K-step trace) are compared
    and per-step maxima summed, mirroring the sequential composition the
    closed-form budget uses. Only small instances are tractable: density
    estimation needs n <= 4 and K <= 3.
    """
    n = len(config.secrets)
    if config.distribution is not Distribution.LAPLACE:
        raise UnsupportedDistributionError("the audit targets the Laplace guarantee")
    if n > 4 or K > 3:
        raise ConfigError("density-ratio audit is limited to n <= 4, K <= 3")
    if config.events:
        raise ConfigError("audit runs on event-free configurations")
    if min_bin_count is None:
        min_bin_count = max(500, samples // 400)

    s_a = np.asarray(config.secrets, dtype=np.float64)
    s_b = s_a.copy()
    s_b[adjacent_index] += delta
    src = NoiseSource(config.rng_seed)
    tr_a = _sample_traces(s_a, config.schedules, config.distribution, src, K, samples, 0)
    tr_b = _sample_traces(s_b, config.schedules, config.distribution, src, K, samples, samples)

    per_step, floors = [], []
    bins_used = bins_skipped = 0
    for k in range(K):
        best, best_floor = 0.0, 0.0
        for i in range(n):
            obs, se, used, skipped = _coordinate_log_ratio(
                tr_a[k, i], tr_b[k, i], min_bin_count
            )
            bins_used += used
            bins_skipped += skipped
            if obs > best:
                best, best_floor = obs, se
        per_step.append(best)
        floors.append(best_floor)
    if bins_used == 0:
        raise InsufficientSamplesError(
            f"no histogram bin reached {min_bin_count} samples on both sides"
        )
    agg = ScheduleAggregates.from_schedules(config.schedules)
    budget = epsilon_total(agg, delta, K, config.distribution)
    # Multiple-testing inflation over the qualifying bins, on top of the
    # per-bin standard errors at the argmax.
    z = math.sqrt(2.0 * math.log(max(bins_used, 2)))
    return AuditResult(
        observed=math.fsum(per_step),
        per_step=per_step,
        epsilon=budget.total,
        noise_floor=z * math.fsum(floors),
        bins_used=bins_used,
        bins_skipped=bins_skipped,
        samples=samples,
    )


# -- structural oracles -------------------------------------------------------


def shift_matrix(n: int, dtype=np.float64) -> np.ndarray:
    """The cyclic-shift matrix A with x(k+1) = A x(k) rotating states forward."""
    a = np.zeros((n, n), dtype=dtype)
    for i in range(n):
        a[i, (i - 1) % n] = 1
    return a


@dataclass(frozen=True)
class CirculantReport:
    n: int
    power_sum_is_all_ones: bool
    nth_power_is_identity: bool

    @property
    def holds(self) -> bool:
        return self.power_sum_is_all_ones and self.nth_power_is_identity


def circulant_oracle(n: int) -> CirculantReport:
    """Verify sum_{r<n} A^r equals the all-ones matrix and A^n = I, exactly.

    Integer matrix arithmetic, so the check is free of rounding.
    """
    if not 3 <= n <= 64:
        raise ConfigError(f"oracle supports 3 <= n <= 64, got {n}")
    a = shift_matrix(n, dtype=np.int64)
    power = np.eye(n, dtype=np.int64)
    total = np.zeros((n, n), dtype=np.int64)
    for _ in range(n):
        total += power
        power = a @ power
    return CirculantReport(
        n=n,
        power_sum_is_all_ones=bool(np.array_equal(total, np.ones((n, n), dtype=np.int64))),
        nth_power_is_identity=bool(np.array_equal(power, np.eye(n, dtype=np.int64))),
    )


@dataclass(frozen=True)
class Lemma1Report:
    mc_trace: float
    bound: float
    stderr: float
    holds: bool


def lemma1_check(matrices, variances, samples: int = 100_000, seed: int = 0) -> Lemma1Report:
    """Monte Carlo check of tr(cov(sum_i C^i r^i)) <= sum_i ||C^i||_F^2 sigma_M^i.

    Each r^i has independent zero-mean Gaussian components with the given
    per-component variances (diagonal covariance by construction).
    """
    matrices = [np.asarray(c, dtype=np.float64) for c in matrices]
    variances = [np.asarray(v, dtype=np.float64) for v in variances]
    if len(matrices) != len(variances):
        raise ValueError("need one variance vector per matrix")
    n = matrices[0].shape[0]
    for c, v in zip(matrices, variances):
        if c.shape != (n, n) or v.shape != (n,):
            raise ValueError(f"dimension mismatch: expected ({n},{n}) and ({n},)")
    rng = np.random.default_rng(seed)
    y = np.zeros((samples, n))
    for c, v in zip(matrices, variances):
        r = rng.normal(size=(samples, n)) * np.sqrt(v)
        y += r @ c.T
    var_j = y.var(axis=0, ddof=1)
    mc_trace = float(var_j.sum())
    bound = math.fsum(
        float((c**2).sum()) * float(v.max()) for c, v in zip(matrices, variances)
    )
    stderr = float(np.sqrt((2.0 * var_j**2 / (samples - 1)).sum()))
    return Lemma1Report(mc_trace, bound, stderr, mc_trace <= bound + 3.0 * stderr)
