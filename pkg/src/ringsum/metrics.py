"""Solution estimator and Monte Carlo error aggregation.

A node's estimate is the sum of its own last n recorded states (n = current
member count). The window sum over states x_i(k-n+1..k) equals the protocol's
forward-looking window starting at k-n+1, so results carry both indices.
Windows reset on every membership change; errors are always measured against
the current-phase member sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ProtocolConfig, RingSumError
from .engine import ProtocolRun, run_si
from .noise import NoiseSource


class WindowNotFullError(RingSumError, ValueError):
    """Estimator requested before n consecutive states are available."""


@dataclass
class SegmentWindows:
    """All full-window estimates inside one constant-membership stretch."""

    order: tuple[int, ...]
    target: float
    k_end: np.ndarray  # window end step, per row of y
    y: np.ndarray      # shape (len(k_end), len(order))

    @property
    def k_start(self) -> np.ndarray:
        return self.k_end - (len(self.order) - 1)

    def sum_abs_error(self) -> np.ndarray:
        return np.abs(self.y - self.target).sum(axis=1)


def _sliding_window_sums(states: np.ndarray, width: int) -> np.ndarray:
    """Row t of the result sums rows t..t+width-1 of `states`."""
    cum = np.cumsum(states, axis=0, dtype=np.float64)
    out = cum[width - 1 :].copy()
    out[1:] -= cum[:-width]
    return out


def window_sums(run: ProtocolRun) -> list[SegmentWindows]:
    """Per-segment estimator series for a completed run with recorded states."""
    if not run.record_states:
        raise WindowNotFullError("run was executed without state recording")
    result = []
    for seg in run.segments:
        states = seg.state_matrix()
        n = seg.n
        if len(states) < n:
            continue
        y = _sliding_window_sums(states, n)
        k_end = seg.start_k + np.arange(n - 1, len(states))
        result.append(SegmentWindows(seg.order, seg.target, k_end, y))
    return result


def estimator(run: ProtocolRun, node: int, k: int) -> float:
    """Window sum of `node`'s states ending at step k (window length n)."""
    if not run.record_states:
        raise WindowNotFullError("run was executed without state recording")
    for seg in run.segments:
        offset = k - seg.start_k
        if node in seg.order and 0 <= offset < len(seg.states):
            if offset < seg.n - 1:
                raise WindowNotFullError(
                    f"node {node} has only {offset + 1} states at k={k}, needs {seg.n}"
                )
            j = seg.order.index(node)
            col = seg.state_matrix()[offset - seg.n + 1 : offset + 1, j]
            return float(col.sum())
    raise WindowNotFullError(f"no recorded window for node {node} ending at k={k}")


def error_series(run: ProtocolRun) -> tuple[np.ndarray, np.ndarray]:
    """(k_end, sum_i |y_i - target|) across all segments of one run."""
    parts = window_sums(run)
    if not parts:
        return np.array([], dtype=int), np.array([])
    ks = np.concatenate([p.k_end for p in parts])
    errs = np.concatenate([p.sum_abs_error() for p in parts])
    return ks, errs


# -- Monte Carlo aggregation ------------------------------------------------


@dataclass
class ErrorAggregate:
    """Per-step Monte Carlo error estimates across independent trials."""

    ks: np.ndarray
    mean_abs_error: np.ndarray
    mae_stderr: np.ndarray
    sum_variance: np.ndarray
    sum_variance_stderr: np.ndarray
    trials: int

    def at(self, k: int) -> tuple[float, float, float, float]:
        i = int(np.searchsorted(self.ks, k))
        if i >= len(self.ks) or self.ks[i] != k:
            raise KeyError(f"no aggregate at k={k}")
        return (
            float(self.mean_abs_error[i]),
            float(self.mae_stderr[i]),
            float(self.sum_variance[i]),
            float(self.sum_variance_stderr[i]),
        )


def _dense_states(config: ProtocolConfig, trials: int) -> tuple[np.ndarray, float]:
    """State tensor (K+1, trials, n) for an event-free config; also max drift.

    Same noise stream coordinates as the scalar engine, so trajectories match
    run_si(config, trial=t) bit for bit.
    """
    n = len(config.secrets)
    K = config.steps
    src = NoiseSource(config.rng_seed)
    from .engine import scale_column

    nodes = np.arange(1, n + 1, dtype=np.uint64)
    ks = np.arange(K, dtype=np.uint64)
    scales = np.empty((K, n))
    for j, sched in enumerate(config.schedules):
        scales[:, j] = scale_column(sched, ks)
    betas = src.sample(
        nodes[None, None, :],
        np.arange(K, dtype=np.uint64)[:, None, None],
        np.arange(trials, dtype=np.uint64)[None, :, None],
        scales[:, None, :],
        config.distribution,
    )
    states = np.empty((K + 1, trials, n))
    states[0] = np.asarray(config.secrets)
    x = states[0].copy()
    total = config.total
    denom = max(1.0, abs(total))
    max_drift = 0.0
    for k in range(K):
        d = x - betas[k]
        x = betas[k] + np.roll(d, 1, axis=1)
        states[k + 1] = x
        drift = np.abs(x.sum(axis=1) - total).max() / denom
        if drift > max_drift:
            max_drift = drift
    return states, max_drift


def trial_windows(config: ProtocolConfig, trials: int) -> list[SegmentWindows]:
    """Estimator series stacked across trials: y has shape (trials, steps, n)."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if not config.events:
        states, _ = _dense_states(config, trials)
        n = len(config.secrets)
        cum = np.cumsum(states, axis=0)
        y = cum[n - 1 :].copy()
        y[1:] -= cum[:-n]
        k_end = np.arange(n - 1, config.steps + 1)
        return [
            SegmentWindows(
                tuple(range(1, n + 1)),
                config.total,
                k_end,
                np.swapaxes(y, 0, 1),
            )
        ]
    out: list[SegmentWindows] = []
    for t in range(trials):
        run = run_si(config, trial=t, record_trace=False)
        parts = window_sums(run)
        if t == 0:
            for p in parts:
                stacked = np.empty((trials,) + p.y.shape)
                stacked[0] = p.y
                out.append(SegmentWindows(p.order, p.target, p.k_end, stacked))
        else:
            for slot, p in zip(out, parts):
                slot.y[t] = p.y
    return out


def aggregate_trials(config: ProtocolConfig, trials: int) -> ErrorAggregate:
    """Mean absolute error and estimator variance per step, with standard errors."""
    if trials < 2:
        raise ValueError("variance estimation needs at least 2 trials")
    parts = trial_windows(config, trials)
    ks, maes, mae_ses, sumvars, sv_ses = [], [], [], [], []
    for p in parts:
        sae = np.abs(p.y - p.target).sum(axis=2)  # (trials, steps)
        maes.append(sae.mean(axis=0))
        mae_ses.append(sae.std(axis=0, ddof=1) / math.sqrt(trials))
        var = p.y.var(axis=0, ddof=1)  # (steps, n)
        sumvars.append(var.sum(axis=1))
        # Gaussian approximation: var(sample variance) ~ 2 sigma^4 / (T - 1).
        sv_ses.append(np.sqrt((2.0 * var**2 / (trials - 1)).sum(axis=1)))
        ks.append(p.k_end)
    return ErrorAggregate(
        ks=np.concatenate(ks),
        mean_abs_error=np.concatenate(maes),
        mae_stderr=np.concatenate(mae_ses),
        sum_variance=np.concatenate(sumvars),
        sum_variance_stderr=np.concatenate(sv_ses),
        trials=trials,
    )


def trial_mean_estimates(
    config: ProtocolConfig, trials: int, k_end: int
) -> tuple[tuple[int, ...], np.ndarray, np.ndarray]:
    """(nodes, mean of y_i(k_end) across trials, standard errors)."""
    parts = trial_windows(config, trials)
    for p in parts:
        idx = np.flatnonzero(p.k_end == k_end)
        if idx.size:
            y = p.y[:, int(idx[0]), :]
            return p.order, y.mean(axis=0), y.std(axis=0, ddof=1) / math.sqrt(trials)
    raise WindowNotFullError(f"no full window ends at k={k_end}")
