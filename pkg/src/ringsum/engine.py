"""Protocol execution: synchronous rounds, the Poisson-clock variant, and
membership changes.

Synchronous semantics are two-phase per round: every masked message
d_i(k) = x_i(k) - beta_i(k) is computed from the pre-round state before any
node updates, matching the compact dynamics x(k+1) = A x(k) + (I - A) beta(k).

Membership semantics:
  * A leave at step k replaces the round at k. The leaver sends its state
    minus its secret, its predecessor sends nothing and only accumulates the
    incoming message, everyone else runs the normal rule. Standard rounds
    resume at k + 1 on the rewired ring.
  * A join at step k rewires instantly before the round at k: the newcomer
    is inserted after its anchor node with state equal to its secret.
Both transitions conserve the member sum exactly (up to roundoff).

Harmonic schedules with d = 0 have no finite scale at k = 0; runs substitute
d = 1 for the k = 0 draw only and flag it (`start_shift_applied`), which the
privacy accounting mirrors.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ConfigError,
    Distribution,
    Family,
    Join,
    Leave,
    NoiseSchedule,
    ProtocolConfig,
    RingSumError,
    RingTopology,
    build_ring,
)
from .noise import NoiseSource


class MembershipError(RingSumError, ValueError):
    """Invalid join or leave request."""


def _scale_with_start_shift(schedule: NoiseSchedule, k: int) -> float:
    """v(k), substituting d = 1 at k = 0 for harmonic schedules with d = 0."""
    if k == 0 and schedule.family is Family.HARMONIC and schedule.d == 0:
        return schedule.c
    return schedule.scale(k)


def scale_column(schedule: NoiseSchedule, ks: np.ndarray) -> np.ndarray:
    """Vectorized v(k) over integer steps, with the same d = 0 substitution.

    Every execution path samples scales through this one routine so that
    scalar and batched runs see bit-identical noise.
    """
    ks_f = np.asarray(ks, dtype=np.float64)
    if schedule.family is Family.HARMONIC:
        if schedule.d == 0:
            return schedule.c / np.maximum(ks_f, 1.0)
        return schedule.c / (ks_f + schedule.d)
    return schedule.c * schedule.phi**ks_f


@dataclass
class Segment:
    """A maximal stretch of constant membership.

    `states[t]` is the state vector at step `start_k + t`, aligned with
    `order`. The estimator window length inside a segment is `len(order)`.
    """

    start_k: int
    order: tuple[int, ...]
    target: float
    states: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.order)

    def state_matrix(self) -> np.ndarray:
        return np.asarray(self.states)


class ProtocolRun:
    """Evolving protocol state plus the adversary-observable message trace."""

    def __init__(
        self,
        topology: RingTopology,
        secrets: dict[int, float],
        schedules: dict[int, NoiseSchedule],
        distribution: Distribution,
        source: NoiseSource,
        trial: int = 0,
        record_trace: bool = True,
        record_states: bool = True,
    ):
        self.topology = topology
        self.secrets = dict(secrets)
        self.schedules = dict(schedules)
        self.distribution = distribution
        self.source = source
        self.trial = trial
        self.record_trace = record_trace
        self.record_states = record_states

        self.order: list[int] = topology.order_from(topology.nodes[0])
        self.x = np.array([secrets[i] for i in self.order], dtype=np.float64)
        self.k = 0
        self.trace: list[tuple[int, int, float]] = []
        self.target = math.fsum(secrets[i] for i in self.order)
        self.max_rel_drift = 0.0
        self.start_shift_applied = any(
            s.family is Family.HARMONIC and s.d == 0 for s in self.schedules.values()
        )
        self.segments: list[Segment] = []
        self._open_segment()
        self._beta_cache = None  # (start_k, order snapshot, matrix)

    # -- bookkeeping ------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(self.order)

    def member_sum(self) -> float:
        return float(self.x.sum())

    def state_of(self, node: int) -> float:
        return float(self.x[self.order.index(node)])

    def _open_segment(self):
        seg = Segment(self.k, tuple(self.order), self.target)
        if self.record_states:
            seg.states.append(self.x.copy())
        self.segments.append(seg)

    def _after_step(self):
        if self.record_states:
            self.segments[-1].states.append(self.x.copy())
        drift = abs(self.x.sum() - self.target) / max(1.0, abs(self.target))
        if drift > self.max_rel_drift:
            self.max_rel_drift = drift

    def _scales(self, k: int) -> np.ndarray:
        ks = np.array([k], dtype=np.uint64)
        return np.array(
            [scale_column(self.schedules[i], ks)[0] for i in self.order]
        )

    def _betas(self, k: int) -> np.ndarray:
        cache = self._beta_cache
        if cache is not None:
            start, order, mat = cache
            if order == tuple(self.order) and start <= k < start + len(mat):
                return mat[k - start]
        return self.source.sample(
            np.array(self.order, dtype=np.uint64),
            k,
            self.trial,
            self._scales(k),
            self.distribution,
        )

    def prime_betas(self, k_from: int, k_to: int):
        """Pre-sample noise for steps [k_from, k_to) under current membership."""
        if k_to <= k_from:
            return
        ks = np.arange(k_from, k_to, dtype=np.uint64)
        nodes = np.array(self.order, dtype=np.uint64)
        scales = np.empty((k_to - k_from, len(nodes)))
        for j, node in enumerate(self.order):
            scales[:, j] = scale_column(self.schedules[node], ks)
        mat = self.source.sample(
            nodes[None, :], ks[:, None], self.trial, scales, self.distribution
        )
        self._beta_cache = (k_from, tuple(self.order), mat)


# -- operations -----------------------------------------------------------


def si_step(run: ProtocolRun, source: NoiseSource | None = None) -> ProtocolRun:
    """One synchronous round: mask, hand off along the ring, increment k."""
    if source is not None and source is not run.source:
        run.source = source
        run._beta_cache = None
    beta = run._betas(run.k)
    d = run.x - beta
    run.x = beta + np.roll(d, 1)
    if run.record_trace:
        k = run.k
        run.trace.extend((k, node, float(dv)) for node, dv in zip(run.order, d))
    run.k += 1
    run._after_step()
    return run


def leave(run: ProtocolRun, node: int, k: int | None = None) -> ProtocolRun:
    """Execute the departure round for `node` at the current step.

    The leaver unmasks its secret out of its final message; its predecessor
    skips sending and only accumulates. The member sum drops by the leaver's
    secret exactly.
    """
    if k is not None and k != run.k:
        raise MembershipError(f"leave scheduled at k={k} but run is at k={run.k}")
    if node not in run.order:
        raise MembershipError(f"node {node} is not a member")
    if run.n - 1 < 3:
        raise MembershipError("leave rejected: membership would drop below 3")

    n = run.n
    li = run.order.index(node)
    pi = (li - 1) % n

    beta = run._betas(run.k)
    d = run.x - beta
    d[li] = run.x[li] - run.secrets[node]

    new_x = beta + np.roll(d, 1)
    new_x[pi] = run.x[pi] + d[(pi - 1) % n]  # predecessor keeps its state unmasked
    if run.record_trace:
        kk = run.k
        run.trace.extend(
            (kk, nd, float(d[j])) for j, nd in enumerate(run.order) if j != pi
        )

    run.topology = run.topology.with_leave(node)
    run.order.pop(li)
    run.x = np.delete(new_x, li)
    run.target = math.fsum(run.secrets[i] for i in run.order)
    run.k += 1
    run._beta_cache = None
    run._open_segment()
    drift = abs(run.x.sum() - run.target) / max(1.0, abs(run.target))
    run.max_rel_drift = max(run.max_rel_drift, drift)
    return run


def join(
    run: ProtocolRun,
    new_node: int,
    anchor: int,
    secret: float,
    schedule: NoiseSchedule | None = None,
) -> ProtocolRun:
    """Insert `new_node` after `anchor` with state equal to its secret.

    Takes effect immediately; the next round runs on the enlarged ring. If no
    schedule is given, a returning node reuses its previous one, otherwise it
    copies the anchor's.
    """
    if new_node in run.order:
        raise MembershipError(f"node {new_node} is already a member")
    if anchor not in run.order:
        raise MembershipError(f"anchor node {anchor} is not a member")
    run.topology = run.topology.with_join(new_node, anchor)
    pos = run.order.index(anchor) + 1
    run.order.insert(pos, new_node)
    run.x = np.insert(run.x, pos, secret)
    run.secrets[new_node] = secret
    if schedule is not None:
        run.schedules[new_node] = schedule
    elif new_node not in run.schedules:
        run.schedules[new_node] = run.schedules[anchor]
    run.target = math.fsum(run.secrets[i] for i in run.order)
    run._beta_cache = None
    run._open_segment()
    return run


def run_si(
    config: ProtocolConfig,
    trial: int = 0,
    record_trace: bool = True,
    record_states: bool = True,
    source: NoiseSource | None = None,
) -> ProtocolRun:
    """Execute K synchronous rounds with membership events at their times."""
    n = len(config.secrets)
    topo = build_ring(n)
    run = ProtocolRun(
        topo,
        secrets=dict(zip(topo.nodes, config.secrets)),
        schedules=dict(zip(topo.nodes, config.schedules)),
        distribution=config.distribution,
        source=source or NoiseSource(config.rng_seed),
        trial=trial,
        record_trace=record_trace,
        record_states=record_states,
    )
    joins_at: dict[int, list[Join]] = {}
    leave_at: dict[int, Leave] = {}
    for ev in config.events:
        if isinstance(ev, Join):
            joins_at.setdefault(ev.time, []).append(ev)
        else:
            if ev.time in leave_at:
                raise ConfigError(f"multiple leave events at time {ev.time}")
            leave_at[ev.time] = ev

    boundaries = sorted(
        {0, config.steps}
        | set(joins_at)
        | set(leave_at)
        | {t + 1 for t in leave_at if t + 1 < config.steps}
    )
    for lo, hi in zip(boundaries, boundaries[1:]):
        for ev in joins_at.get(lo, ()):
            join(run, ev.node, ev.anchor, ev.secret, ev.schedule)
        start = lo
        if lo in leave_at:
            leave(run, leave_at[lo].node)
            start = lo + 1
        run.prime_betas(start, hi)
        for _ in range(start, hi):
            si_step(run)
    return run


# -- asynchronous variant ---------------------------------------------------


class AsyncClock:
    """Merged per-node Poisson clocks; pops globally ordered tick events.

    Timestamps are strictly increasing with ties broken by node identifier
    (exact float ties are broken deterministically by the heap ordering).
    """

    def __init__(self, nodes, rate: float, source: NoiseSource, trial: int = 0):
        if rate <= 0:
            raise ConfigError(f"Poisson rate must be positive, got {rate}")
        self.rate = rate
        self.source = source
        self.trial = trial
        self._heap = [
            (source.clock_gap(node, 0, trial, rate), node, 0) for node in nodes
        ]
        heapq.heapify(self._heap)

    def next_tick(self) -> tuple[float, int, int]:
        """(timestamp, node, local tick index) of the next tick; reschedules."""
        t, node, m = heapq.heappop(self._heap)
        gap = self.source.clock_gap(node, m + 1, self.trial, self.rate)
        heapq.heappush(self._heap, (t + gap, node, m + 1))
        return t, node, m


def run_ai(
    config: ProtocolConfig,
    rate: float,
    horizon: float,
    trial: int = 0,
    record_trace: bool = True,
    record_states: bool = True,
    tick_order=None,
) -> ProtocolRun:
    """Poisson-clock execution until the time horizon.

    On node i's tick with local count m: draw beta at scale v_i(m), send
    d = x_i - beta forward, set x_i to beta, successor accumulates d. The
    member sum is conserved at every event. `tick_order` replaces the Poisson
    clock with an explicit node sequence (deterministic replay for testing).

    Membership events are not supported here; the rewiring rules above are
    defined for the synchronous rounds only.
    """
    if config.events:
        raise ConfigError("membership events are not supported by the asynchronous engine")
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    n = len(config.secrets)
    topo = build_ring(n)
    source = NoiseSource(config.rng_seed)
    run = ProtocolRun(
        topo,
        secrets=dict(zip(topo.nodes, config.secrets)),
        schedules=dict(zip(topo.nodes, config.schedules)),
        distribution=config.distribution,
        source=source,
        trial=trial,
        record_trace=record_trace,
        record_states=record_states,
    )
    pos = {node: j for j, node in enumerate(run.order)}
    tick_counts = {node: 0 for node in run.order}

    if tick_order is not None:
        ticks = ((float(i + 1), node) for i, node in enumerate(tick_order))
    else:
        clock = AsyncClock(run.order, rate, source, trial)

        def _poisson():
            while True:
                t, node, _ = clock.next_tick()
                if t > horizon:
                    return
                yield t, node

        ticks = _poisson()

    for event_index, (t, node) in enumerate(ticks):
        m = tick_counts[node]
        tick_counts[node] = m + 1
        scale = _scale_with_start_shift(run.schedules[node], m)
        beta = run.source.sample(node, m, trial, scale, run.distribution)
        j = pos[node]
        d = run.x[j] - beta
        run.x[j] = beta
        run.x[(j + 1) % n] += d
        if run.record_trace:
            run.trace.append((event_index, node, float(d)))
        run.k = event_index + 1
        run._after_step()
    run.tick_counts = tick_counts
    return run
