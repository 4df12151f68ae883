"""Domain types shared by the simulator and the analysis code.

Everything here is immutable after construction and safe to share across
threads. Node identifiers are opaque nonnegative integers; ring order is
carried by the successor map, never by identifier arithmetic, so membership
changes do not renumber surviving nodes.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class RingSumError(Exception):
    """Base class for all errors raised by this package."""


class TopologyError(RingSumError, ValueError):
    """Invalid ring construction or rewiring request."""


class DegenerateScheduleError(RingSumError, ValueError):
    """Noise schedule evaluated where its scale is undefined (k + d = 0)."""


class ConfigError(RingSumError, ValueError):
    """Invalid protocol configuration."""


class Family(enum.Enum):
    HARMONIC = "harmonic"
    GEOMETRIC = "geometric"


class Distribution(enum.Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    UNIFORM_SYMMETRIC = "uniform"


# Scale parameterization: the schedule value v(k) is used as the Laplace
# *scale* parameter b (actual variance 2 v^2) and as the standard deviation
# for the Gaussian and symmetric-uniform kinds. The Laplace scale reading is
# the one under which the per-step privacy budget delta / v(k) is exact.


@dataclass(frozen=True)
class NoiseSchedule:
    """A node's decaying noise magnitude v(k).

    Harmonic: v(k) = c / (k + d), geometric: v(k) = c * phi**k.
    """

    family: Family
    c: float
    d: float | None = None
    phi: float | None = None

    def __post_init__(self):
        if self.c < 0:
            raise ConfigError(f"noise magnitude c must be >= 0, got {self.c}")
        if self.family is Family.HARMONIC:
            if self.d is None or self.d < 0:
                raise ConfigError(f"harmonic schedule needs offset d >= 0, got {self.d}")
            if self.phi is not None:
                raise ConfigError("harmonic schedule must not set phi")
        elif self.family is Family.GEOMETRIC:
            if self.phi is None or not 0.0 < self.phi < 1.0:
                raise ConfigError(f"geometric schedule needs phi in (0,1), got {self.phi}")
            if self.d is not None:
                raise ConfigError("geometric schedule must not set d")
        else:  # pragma: no cover - enum is closed
            raise ConfigError(f"unknown schedule family {self.family}")

    @classmethod
    def harmonic(cls, c: float, d: float) -> "NoiseSchedule":
        return cls(Family.HARMONIC, c, d=d)

    @classmethod
    def geometric(cls, c: float, phi: float) -> "NoiseSchedule":
        return cls(Family.GEOMETRIC, c, phi=phi)

    def scale(self, k: int) -> float:
        """The noise magnitude v(k); raises if the harmonic form is undefined."""
        if self.family is Family.HARMONIC:
            denom = k + self.d
            if denom <= 0:
                raise DegenerateScheduleError(
                    f"harmonic schedule undefined at k={k} with d={self.d}"
                )
            return self.c / denom
        return self.c * self.phi**k


def variance_at(schedule: NoiseSchedule, k: int) -> float:
    """The scheduled variance v(k)**2; strictly decreasing in k."""
    return schedule.scale(k) ** 2


@dataclass(frozen=True)
class RingTopology:
    """A directed ring: nodes plus the successor permutation.

    The successor map must be a single n-cycle over all nodes with n > 2.
    """

    nodes: tuple[int, ...]
    successor: dict[int, int]

    def __post_init__(self):
        n = len(self.nodes)
        if n <= 2:
            raise TopologyError(f"a ring needs more than 2 nodes, got {n}")
        if len(set(self.nodes)) != n:
            raise TopologyError("duplicate node identifiers")
        if set(self.successor) != set(self.nodes):
            raise TopologyError("successor map must cover exactly the node set")
        # Single-cycle check: walking the successor map from any node must
        # visit every node exactly once before returning.
        seen = []
        cur = self.nodes[0]
        for _ in range(n):
            seen.append(cur)
            cur = self.successor[cur]
        if cur != self.nodes[0] or len(set(seen)) != n:
            raise TopologyError("successor map is not a single cycle over all nodes")

    @property
    def n(self) -> int:
        return len(self.nodes)

    def predecessor_map(self) -> dict[int, int]:
        return {succ: node for node, succ in self.successor.items()}

    def predecessor(self, node: int) -> int:
        return self.predecessor_map()[node]

    def order_from(self, start: int) -> list[int]:
        """Nodes in ring order starting at `start`."""
        out = [start]
        cur = self.successor[start]
        while cur != start:
            out.append(cur)
            cur = self.successor[cur]
        return out

    def with_leave(self, node: int) -> "RingTopology":
        """Rewire so that the leaver's predecessor points at its successor."""
        if node not in self.successor:
            raise TopologyError(f"node {node} is not a member")
        if self.n - 1 < 3:
            raise TopologyError("leaving would shrink the ring below 3 nodes")
        pred = self.predecessor(node)
        succ = self.successor[node]
        new_succ = {a: b for a, b in self.successor.items() if a != node}
        new_succ[pred] = succ
        return RingTopology(tuple(x for x in self.nodes if x != node), new_succ)

    def with_join(self, new_node: int, anchor: int) -> "RingTopology":
        """Insert `new_node` between `anchor` and anchor's successor."""
        if new_node in self.successor:
            raise TopologyError(f"node {new_node} is already a member")
        if anchor not in self.successor:
            raise TopologyError(f"anchor node {anchor} is not a member")
        new_succ = dict(self.successor)
        new_succ[new_node] = new_succ[anchor]
        new_succ[anchor] = new_node
        return RingTopology(self.nodes + (new_node,), new_succ)


def build_ring(n: int) -> RingTopology:
    """The canonical ring on nodes 1..n with successor(i) = i + 1, successor(n) = 1."""
    if n <= 2:
        raise TopologyError(f"a ring needs more than 2 nodes, got {n}")
    nodes = tuple(range(1, n + 1))
    successor = {i: i + 1 for i in range(1, n)}
    successor[n] = 1
    return RingTopology(nodes, successor)


@dataclass(frozen=True)
class Leave:
    time: int
    node: int


@dataclass(frozen=True)
class Join:
    time: int
    node: int
    anchor: int
    secret: float
    schedule: NoiseSchedule | None = None


MembershipEvent = Leave | Join


@dataclass(frozen=True)
class ProtocolConfig:
    """Full description of one protocol run.

    `schedules` must be family-homogeneous: every closed-form bound in the
    analysis module assumes a single schedule family across nodes.
    """

    secrets: tuple[float, ...]
    schedules: tuple[NoiseSchedule, ...]
    distribution: Distribution
    steps: int
    rng_seed: int
    events: tuple[MembershipEvent, ...] = ()

    def __post_init__(self):
        n = len(self.secrets)
        if n <= 2:
            raise ConfigError(f"need more than 2 secrets, got {n}")
        if len(self.schedules) != n:
            raise ConfigError(
                f"{len(self.schedules)} schedules for {n} secrets; one per node required"
            )
        families = {s.family for s in self.schedules}
        if len(families) != 1:
            raise ConfigError("schedules must share a single family across nodes")
        if self.steps < 1:
            raise ConfigError(f"step count must be >= 1, got {self.steps}")
        times = [e.time for e in self.events]
        if times != sorted(times):
            raise ConfigError("membership events must be time-ordered")
        for e in self.events:
            if not 0 <= e.time < self.steps:
                raise ConfigError(f"event time {e.time} outside [0, {self.steps})")

    @classmethod
    def uniform(
        cls,
        secrets,
        schedule: NoiseSchedule,
        distribution: Distribution,
        steps: int,
        rng_seed: int,
        events=(),
    ) -> "ProtocolConfig":
        """Every node shares one schedule (the common case in practice)."""
        secrets = tuple(float(s) for s in secrets)
        return cls(secrets, (schedule,) * len(secrets), distribution, steps, rng_seed, tuple(events))

    @property
    def family(self) -> Family:
        return self.schedules[0].family

    @property
    def total(self) -> float:
        return math.fsum(self.secrets)
