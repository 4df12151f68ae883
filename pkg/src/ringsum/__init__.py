"""Iterative privacy-preserving summation on a directed ring.

Simulator for the synchronous masked hand-off protocol and its Poisson-clock
variant, closed-form utility/accuracy/privacy bounds, an empirical
differential-privacy auditor, and the noise-parameter tradeoff solver.
"""

from .model import (
    ConfigError,
    DegenerateScheduleError,
    Distribution,
    Family,
    Join,
    Leave,
    MembershipEvent,
    NoiseSchedule,
    ProtocolConfig,
    RingSumError,
    RingTopology,
    TopologyError,
    build_ring,
    variance_at,
)
from .noise import NoiseSource, sample_beta
from .engine import (
    AsyncClock,
    MembershipError,
    ProtocolRun,
    join,
    leave,
    run_ai,
    run_si,
    si_step,
)
from .metrics import (
    ErrorAggregate,
    WindowNotFullError,
    aggregate_trials,
    estimator,
    error_series,
    trial_mean_estimates,
    window_sums,
)
from .analysis import (
    AuditResult,
    CirculantReport,
    InsufficientSamplesError,
    Lemma1Report,
    MixedFamilyError,
    PrivacyBudget,
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
from .tradeoff import (
    DegenerateTradeoffError,
    GeometricSurface,
    TradeoffProblem,
    TradeoffSolution,
    explore_geometric,
    objective_geometric,
    objective_harmonic,
    solve_harmonic,
)

__version__ = "0.1.0"
