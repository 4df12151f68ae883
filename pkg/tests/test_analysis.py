"""Closed-form bounds, privacy accounting, audit, and structural oracles."""
import math

import numpy as np
import pytest

from ringsum import (
    ConfigError,
    Distribution,
    MixedFamilyError,
    NoiseSchedule,
    ProtocolConfig,
    ScheduleAggregates,
    UnsupportedDistributionError,
    circulant_oracle,
    dp_audit,
    epsilon_total,
    lemma1_check,
    shift_matrix,
    utility_bound,
    variance_bound,
)

HARM1000 = NoiseSchedule.harmonic(1000.0, 1.0)


def _agg(*schedules):
    return ScheduleAggregates.from_schedules(schedules)


class TestAggregates:
    def test_harmonic_extremes(self):
        agg = _agg(NoiseSchedule.harmonic(2.0, 1.0), NoiseSchedule.harmonic(5.0, 3.0))
        assert (agg.c_M, agg.c_m, agg.d_M) == (5.0, 2.0, 3.0)

    def test_geometric_extremes_and_pairs(self):
        agg = _agg(NoiseSchedule.geometric(1.0, 0.5), NoiseSchedule.geometric(2.0, 0.8))
        assert (agg.c_M, agg.c_m) == (2.0, 1.0)
        assert (agg.phi_M, agg.phi_m) == (0.8, 0.5)
        assert agg.pairs == ((1.0, 0.5), (2.0, 0.8))

    def test_mixed_families_rejected(self):
        with pytest.raises(MixedFamilyError):
            _agg(NoiseSchedule.harmonic(1.0, 1.0), NoiseSchedule.geometric(1.0, 0.5))


class TestBounds:
    def test_harmonic_utility_reference_value(self):
        # c_M pi n sqrt(n/6) at c=1000, n=10.
        agg = _agg(*[HARM1000] * 10)
        assert utility_bound(agg, 10) == pytest.approx(4.0558e4, rel=1e-4)

    def test_harmonic_variance_reference_value(self):
        # c_M^2 pi^2 n^2 / 3 at c=1000, n=10.
        agg = _agg(*[HARM1000] * 10)
        assert variance_bound(agg, 10) == pytest.approx(3.28987e8, rel=1e-4)

    def test_geometric_bounds_formulas(self):
        agg = _agg(NoiseSchedule.geometric(2.0, 0.5))
        n = 4
        assert utility_bound(agg, n) == pytest.approx(2.0 * n * math.sqrt(n / 0.75))
        assert variance_bound(agg, n) == pytest.approx(2.0 * n**2 * 4.0 / 0.75)

    def test_geometric_maximizes_over_heterogeneous_nodes(self):
        a = NoiseSchedule.geometric(1.0, 0.5)
        b = NoiseSchedule.geometric(0.5, 0.95)  # smaller c but much slower decay
        agg = _agg(a, b)
        per_node = [
            c * 3 * math.sqrt(3 / (1 - phi**2)) for c, phi in [(1.0, 0.5), (0.5, 0.95)]
        ]
        assert utility_bound(agg, 3) == pytest.approx(max(per_node))

    def test_small_rings_rejected(self):
        agg = _agg(HARM1000)
        with pytest.raises(ConfigError):
            utility_bound(agg, 2)


class TestPrivacyBudget:
    def test_harmonic_reference_case(self):
        # c=2, d=0, delta=1, K=2: eps_0 + eps_1 = 0 + 1/2... composed via the
        # closed form delta K ((K-1)/2 + d) / c = 1.0 with c=1, d=1/2 scaled.
        agg = _agg(NoiseSchedule.harmonic(1.0, 0.0))
        budget = epsilon_total(agg, delta=1.0, K=2, distribution=Distribution.LAPLACE)
        assert budget.total == pytest.approx(1.0)
        # d=0 start shift: the engine's k=0 substitution costs one extra delta/c.
        assert budget.total_start_shifted == pytest.approx(2.0)

    def test_geometric_reference_case(self):
        agg = _agg(NoiseSchedule.geometric(1.0, 0.5))
        budget = epsilon_total(agg, delta=1.0, K=1, distribution=Distribution.LAPLACE)
        assert budget.total == pytest.approx(1.0)

    def test_composition_identity_harmonic(self):
        agg = _agg(NoiseSchedule.harmonic(3.0, 2.0))
        budget = epsilon_total(agg, delta=0.7, K=100, distribution=Distribution.LAPLACE)
        assert budget.composed_total() == pytest.approx(budget.total, rel=1e-12)

    def test_composition_identity_geometric_log_space(self):
        agg = _agg(NoiseSchedule.geometric(2.0, 0.5))
        budget = epsilon_total(agg, delta=1.0, K=10_000, distribution=Distribution.LAPLACE)
        assert math.isinf(budget.per_step[-1])  # raw terms overflow by design
        assert budget.log_composed_total() == pytest.approx(budget.log_total, rel=1e-12)

    def test_monotone_in_k_delta_and_inverse_c(self):
        for c, delta, K in [(1.0, 0.5, 10), (2.0, 1.0, 20)]:
            agg = _agg(NoiseSchedule.harmonic(c, 1.0))
            base = epsilon_total(agg, delta, K, Distribution.LAPLACE).total
            assert epsilon_total(agg, delta, K + 1, Distribution.LAPLACE).total > base
            assert epsilon_total(agg, delta * 2, K, Distribution.LAPLACE).total > base
            bigger_c = _agg(NoiseSchedule.harmonic(c * 2, 1.0))
            assert epsilon_total(bigger_c, delta, K, Distribution.LAPLACE).total < base

    def test_non_laplace_refused(self):
        agg = _agg(HARM1000)
        with pytest.raises(UnsupportedDistributionError):
            epsilon_total(agg, 1.0, 10, Distribution.GAUSSIAN)

    def test_zero_delta_gives_zero_budget(self):
        agg = _agg(NoiseSchedule.harmonic(1.0, 1.0))
        budget = epsilon_total(agg, 0.0, 5, Distribution.LAPLACE)
        assert budget.total == 0.0


class TestAudit:
    def _config(self, schedule, seed=0):
        return ProtocolConfig.uniform(
            [1.0, 2.0, 3.0], schedule, Distribution.LAPLACE, 3, seed
        )

    def test_observed_ratio_within_budget(self):
        cfg = self._config(NoiseSchedule.harmonic(1.0, 1.0))
        result = dp_audit(cfg, delta=1.0, K=1, samples=200_000)
        assert result.epsilon == pytest.approx(1.0)
        assert result.observed <= result.epsilon + 0.15
        assert result.bins_used > 0

    def test_identical_secrets_show_no_signal(self):
        cfg = self._config(NoiseSchedule.harmonic(1.0, 1.0))
        result = dp_audit(cfg, delta=0.0, K=1, samples=200_000)
        assert result.observed <= result.noise_floor

    def test_large_instances_refused(self):
        cfg = ProtocolConfig.uniform(
            [1.0] * 5, NoiseSchedule.harmonic(1.0, 1.0), Distribution.LAPLACE, 3, 0
        )
        with pytest.raises(ConfigError):
            dp_audit(cfg, 1.0, 1, 1000)

    def test_gaussian_refused(self):
        cfg = ProtocolConfig.uniform(
            [1.0, 2.0, 3.0], NoiseSchedule.harmonic(1.0, 1.0), Distribution.GAUSSIAN, 3, 0
        )
        with pytest.raises(UnsupportedDistributionError):
            dp_audit(cfg, 1.0, 1, 1000)


class TestOracles:
    def test_shift_matrix_rotates_forward(self):
        a = shift_matrix(3)
        assert list(a @ np.array([3.0, 1.0, 2.0])) == [2.0, 3.0, 1.0]

    @pytest.mark.parametrize("n", [3, 8, 16])
    def test_circulant_identity(self, n):
        report = circulant_oracle(n)
        assert report.power_sum_is_all_ones
        assert report.nth_power_is_identity

    def test_circulant_range_enforced(self):
        with pytest.raises(ConfigError):
            circulant_oracle(2)

    def test_lemma1_bound_holds_on_random_instance(self):
        rng = np.random.default_rng(0)
        mats = [rng.normal(size=(4, 4)) for _ in range(3)]
        variances = [rng.uniform(0.5, 2.0, size=4) for _ in range(3)]
        report = lemma1_check(mats, variances, samples=50_000, seed=1)
        assert report.holds

    def test_lemma1_equality_at_uniform_variance(self):
        # With identical per-component variances the bound is tight.
        mats = [np.eye(3)]
        variances = [np.full(3, 1.5)]
        report = lemma1_check(mats, variances, samples=200_000, seed=2)
        assert report.bound == pytest.approx(4.5)
        assert abs(report.mc_trace - report.bound) <= 3 * report.stderr

    def test_lemma1_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lemma1_check([np.eye(3)], [np.ones(2)])
