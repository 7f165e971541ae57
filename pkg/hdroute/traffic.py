# Discrete-time packet simulator and congestion metrics
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from scipy import stats

from hdroute.routing import RLNodeSet, RoutingTables, empty_rl_set, sample_pair, sample_sp

logger = logging.getLogger(__name__)

SUPPORTED_STRATEGIES = ("SP", "LD", "HD")
REMOVAL_MODES = ("random", "bc")

DEFAULT_BUFFER = 40
DEFAULT_WARMUP = 500
DEFAULT_WINDOW = 1500
DEFAULT_RC_THRESHOLD = 0.02


class InvariantViolation(RuntimeError):
    """Raised when the simulator detects a broken runtime invariant."""


class BypassState(Enum):
    NONE = "none"
    PENDING = "pending"
    TAKEN = "taken"


@dataclass(eq=False)
class Packet:
    """
    Unit of traffic.

    route holds the full node sequence from source to destination; position
    indexes the node currently holding the packet.
    """

    source: int
    destination: int
    route: list
    created_at: int
    sp_length: int
    position: int = 0
    bypass_state: BypassState = BypassState.NONE
    bypass_node: int = -1
    beta_index: int = -1
    directing_agent: int = -1
    delivered_at: int = -1

    @property
    def current(self) -> int:
        return self.route[self.position]

    @property
    def next_hop(self) -> int:
        return self.route[self.position + 1]


class NodeQueue:
    """FIFO buffer holding at most capacity packets."""

    def __init__(self, capacity):
        self.capacity = capacity
        self._packets = deque()

    def __len__(self):
        return len(self._packets)

    def __bool__(self):
        return bool(self._packets)

    @property
    def full(self) -> bool:
        return len(self._packets) >= self.capacity

    def push(self, packet) -> bool:
        """Append packet; returns False (and keeps nothing) if the buffer is full."""
        if self.full:
            return False
        self._packets.append(packet)
        return True

    def pop(self) -> Packet:
        return self._packets.popleft()


@dataclass
class TrafficCounters:
    """Cumulative traffic counts and per-step series."""

    drop_by_node: np.ndarray
    generated: int = 0
    delivered: int = 0
    dropped_overflow: int = 0
    dropped_missing_link: int = 0
    in_transit: int = 0
    redirects_to_rl: int = 0
    bypass_decisions: int = 0
    bypass_fallbacks: int = 0
    w_series: list = field(default_factory=list)
    in_transit_series: list = field(default_factory=list)
    delivered_series: list = field(default_factory=list)
    dropped_series: list = field(default_factory=list)
    travel_times: list = field(default_factory=list)

    @classmethod
    def empty(cls, node_count):
        return cls(drop_by_node=np.zeros(node_count, dtype=np.int64))

    @property
    def dropped(self) -> int:
        return self.dropped_overflow + self.dropped_missing_link

    @property
    def W(self) -> int:
        return self.in_transit + self.dropped

    def conserved(self) -> bool:
        return self.generated == self.delivered + self.dropped + self.in_transit

    def travel_time_hist(self) -> dict:
        values, counts = np.unique(np.asarray(self.travel_times, dtype=np.int64), return_counts=True)
        return dict(zip(values.tolist(), counts.tolist()))


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation parameters.

    rate is R, packets generated per step; a fractional part is realized as
    one extra Bernoulli packet per step.
    """

    rate: float
    buffer: int = DEFAULT_BUFFER
    mi_len: int = 10
    mis_per_episode: int = 50
    strategy: str = "SP"
    seed: int = 0
    generate_first: bool = True
    snapshot_time: int = 0
    keep_routes: bool = False

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be greater than 0, got {self.rate}")
        if self.buffer < 1:
            raise ValueError("buffer must be at least 1")
        if self.mi_len < 1:
            raise ValueError("mi_len must be at least 1")
        if self.mis_per_episode < 1:
            raise ValueError("mis_per_episode must be at least 1")
        if self.strategy not in SUPPORTED_STRATEGIES:
            raise ValueError(f"unsupported strategy: {self.strategy}")


@dataclass(frozen=True)
class MiStats:
    """Per-agent statistics of the packets it directed, resolved within one MI."""

    travel_time: float
    drop_rate: float
    delivered: int
    dropped: int
    decisions: int


def packets_this_step(rate, rng) -> int:
    whole = math.floor(rate)
    frac = rate - whole
    if frac > 0 and rng.random() < frac:
        return whole + 1
    return whole


def scaled_travel_time(travel_time, sp_length, buffer) -> float:
    """Travel time over the SP worst case l(s,d)*B, clipped to 1."""
    return min(1.0, travel_time / (sp_length * buffer))


def tagged_summary(scaled_times, dropped) -> tuple:
    """
    Mean scaled travel time and drop rate of tagged packets.

    Both are 0 when no tagged packet was resolved.
    """
    resolved = len(scaled_times) + dropped
    if resolved == 0:
        return 0.0, 0.0
    mean_time = float(np.mean(scaled_times)) if scaled_times else 0.0
    return mean_time, dropped / resolved


def edge_key(u, v) -> tuple:
    return (u, v) if u < v else (v, u)


class Simulator:
    """
    Packet-level traffic on one network under SP, LD or HD routing.

    Each step has a generation phase and a forwarding phase (order set by
    SimConfig.generate_first). During forwarding, nodes holding packets when
    the phase began are visited in a fresh random order and each forwards its
    oldest packet.
    """

    def __init__(self, tables: RoutingTables, config: SimConfig, rl_set: RLNodeSet = None, rng=None):
        self.tables = tables
        self.network = tables.network
        self.config = config
        self.rl_set = rl_set if rl_set is not None else empty_rl_set(self.network)
        if config.strategy != "HD" and self.rl_set.K:
            raise ValueError(f"RL nodes are only used by HD routing, not {config.strategy}")
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.actions = np.zeros(self.rl_set.K, dtype=np.int64)
        self.removed = set()
        self.reset_traffic()

    def reset_traffic(self):
        """Empty all queues and counters; removed links and actions persist."""
        self.t = 0
        self.queues = [NodeQueue(self.config.buffer) for _ in range(self.network.node_count)]
        self.counters = TrafficCounters.empty(self.network.node_count)
        self.drop_snapshot = None
        self.completed_routes = []
        self._reset_tagged()

    def _reset_tagged(self):
        self._tagged_times = [[] for _ in range(self.rl_set.K)]
        self._tagged_drops = np.zeros(self.rl_set.K, dtype=np.int64)
        self._decisions = np.zeros(self.rl_set.K, dtype=np.int64)

    def set_actions(self, actions):
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.rl_set.K,):
            raise ValueError(f"expected {self.rl_set.K} actions, got shape {actions.shape}")
        if np.any((actions < 0) | (actions >= len(self.tables.beta_set))):
            raise ValueError("action index outside the beta set")
        self.actions = actions

    def queue_fraction(self, node) -> float:
        return len(self.queues[node]) / self.config.buffer

    def inject(self, source, destination):
        """
        Create a packet at source and append it to the source queue.

        Returns:
            Packet | None: The packet, or None if the source buffer was full
        """
        if self.config.strategy == "LD":
            route = self.tables.ld_chain(source, destination)
        else:
            route = sample_sp(self.tables, source, destination, self.rng)

        packet = Packet(
            source=source,
            destination=destination,
            route=route,
            created_at=self.t,
            sp_length=int(self.tables.counts.dist[source, destination]),
        )
        if self.config.strategy == "HD":
            node = self.rl_set.designated(route)
            if node >= 0:
                packet.bypass_state = BypassState.PENDING
                packet.bypass_node = node

        self.counters.generated += 1
        self.counters.in_transit += 1
        if not self.queues[source].push(packet):
            self._drop(packet, source, missing_link=False)
            return None
        return packet

    def generate(self):
        n = self.network.node_count
        for _ in range(packets_this_step(self.config.rate, self.rng)):
            source, destination = sample_pair(n, self.rng)
            self.inject(source, destination)

    def forward(self):
        order = self.rng.permutation(self.network.node_count)
        active = [int(node) for node in order if self.queues[node]]
        for node in active:
            self.forward_packet(node)

    def forward_packet(self, node):
        """Pop the head packet at node and move it one hop."""
        packet = self.queues[node].pop()
        if packet.bypass_state is BypassState.PENDING and packet.next_hop == packet.bypass_node:
            self._decide(packet)

        nxt = packet.next_hop
        if self.removed and edge_key(node, nxt) in self.removed:
            self._drop(packet, node, missing_link=True)
        elif nxt == packet.destination:
            packet.position += 1
            self._deliver(packet)
        elif self.queues[nxt].full:
            self._drop(packet, nxt, missing_link=False)
        else:
            packet.position += 1
            self.queues[nxt].push(packet)

    def _decide(self, packet):
        """Apply the current action of the agent at packet.bypass_node."""
        agent = packet.bypass_node
        k = int(self.rl_set.rank[agent])
        beta_index = int(self.actions[k])

        if self.tables.beta_set[beta_index] != 0:
            here = packet.position
            bypass = self.tables.chain(beta_index, packet.current, packet.destination)
            if set(packet.route[:here]).isdisjoint(bypass[1:]):
                packet.route = packet.route[:here] + bypass
                if any(v != agent and v in self.rl_set for v in bypass[1:-1]):
                    self.counters.redirects_to_rl += 1
            else:
                self.counters.bypass_fallbacks += 1

        packet.bypass_state = BypassState.TAKEN
        packet.beta_index = beta_index
        packet.directing_agent = agent
        self.counters.bypass_decisions += 1
        self._decisions[k] += 1

    def _deliver(self, packet):
        packet.delivered_at = self.t + 1
        travel_time = packet.delivered_at - packet.created_at
        self.counters.delivered += 1
        self.counters.in_transit -= 1
        self.counters.travel_times.append(travel_time)

        realized = packet.route[: packet.position + 1]
        if len(set(realized)) != len(realized):
            raise InvariantViolation(f"packet revisited a node: {realized}")
        if self.config.keep_routes:
            self.completed_routes.append(realized)
        if packet.directing_agent >= 0:
            k = int(self.rl_set.rank[packet.directing_agent])
            self._tagged_times[k].append(scaled_travel_time(travel_time, packet.sp_length, self.config.buffer))

    def _drop(self, packet, at_node, missing_link):
        if missing_link:
            self.counters.dropped_missing_link += 1
        else:
            self.counters.dropped_overflow += 1
        self.counters.in_transit -= 1
        self.counters.drop_by_node[at_node] += 1
        if self.config.keep_routes:
            self.completed_routes.append(packet.route[: packet.position + 1])
        if packet.directing_agent >= 0:
            self._tagged_drops[int(self.rl_set.rank[packet.directing_agent])] += 1

    def record(self):
        """Close the current step: advance time and sample the counters."""
        self.t += 1
        c = self.counters
        if not c.conserved():
            raise InvariantViolation(
                f"t={self.t}: generated {c.generated} != delivered {c.delivered}"
                f" + dropped {c.dropped} + in transit {c.in_transit}"
            )
        c.w_series.append(c.W)
        c.in_transit_series.append(c.in_transit)
        c.delivered_series.append(c.delivered)
        c.dropped_series.append(c.dropped)
        if self.config.snapshot_time and self.t == self.config.snapshot_time:
            self.drop_snapshot = c.drop_by_node.copy()

    def step(self) -> dict:
        """
        Advance the traffic by one time step.

        Returns:
            dict: Events of this step (generated, delivered, dropped) and the
            state after it (t, in_transit, W)
        """
        c = self.counters
        before = (c.generated, c.delivered, c.dropped)
        if self.config.generate_first:
            self.generate()
            self.forward()
        else:
            self.forward()
            self.generate()
        self.record()
        return {
            "t": self.t,
            "generated": c.generated - before[0],
            "delivered": c.delivered - before[1],
            "dropped": c.dropped - before[2],
            "in_transit": c.in_transit,
            "W": c.W,
        }

    def run(self, steps):
        for _ in range(steps):
            self.step()

    def run_mi(self) -> dict:
        """
        Run one monitor interval with the current actions.

        Returns:
            dict: MiStats per RL node id
        """
        self._reset_tagged()
        self.run(self.config.mi_len)
        result = {}
        for k, node in enumerate(self.rl_set.nodes):
            travel_time, drop_rate = tagged_summary(self._tagged_times[k], int(self._tagged_drops[k]))
            result[node] = MiStats(
                travel_time=travel_time,
                drop_rate=drop_rate,
                delivered=len(self._tagged_times[k]),
                dropped=int(self._tagged_drops[k]),
                decisions=int(self._decisions[k]),
            )
        return result


def remove_links(sim: Simulator, fraction, mode, rng) -> list:
    """
    Remove a fraction of the present links without rebuilding routes.

    Args:
        sim: Simulator whose topology is damaged
        fraction: Share of present links to remove, 0 < fraction < 1
        mode: "random" (uniform) or "bc" (probability proportional to the
            mean BC of the two endpoints)
        rng: numpy Generator

    Returns:
        list: Removed (u, v) edges with u < v

    Raises:
        ValueError: If fraction or mode is invalid
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if mode not in REMOVAL_MODES:
        raise ValueError(f"unsupported removal mode: {mode}")

    present = [e for e in map(tuple, sim.network.edges.tolist()) if e not in sim.removed]
    count = int(round(fraction * len(present)))
    if count == 0:
        return []

    if mode == "bc":
        bc = sim.network.bc
        weights = np.array([(bc[u] + bc[v]) / 2 for u, v in present])
        # zero-BC links stay possible so sampling without replacement never runs dry
        weights = np.maximum(weights, 1e-12)
        chosen = rng.choice(len(present), size=count, replace=False, p=weights / weights.sum())
    else:
        chosen = rng.choice(len(present), size=count, replace=False)

    removed = sorted(present[i] for i in chosen)
    sim.removed.update(removed)
    logger.info("removed %d links (%s mode)", len(removed), mode)
    return removed


def order_parameter(sim: Simulator, rate, warmup=DEFAULT_WARMUP, window=DEFAULT_WINDOW) -> float:
    """
    Order parameter eta: growth rate of W(t) per generated packet.

    The growth rate is the least-squares slope of W(t) over the window
    following warmup; the result is clamped at 0.

    Raises:
        ValueError: If the run is shorter than warmup + window steps
    """
    w_series = sim.counters.w_series
    if window < 2:
        raise ValueError("window must be at least 2 steps")
    if len(w_series) < warmup + window:
        raise ValueError(
            f"insufficient run length: {len(w_series)} steps < warmup {warmup} + window {window}"
        )
    w = np.asarray(w_series[warmup: warmup + window], dtype=float)
    slope = stats.linregress(np.arange(window, dtype=float), w).slope
    return max(0.0, float(slope) / rate)


def estimate_rc(sweep, threshold=DEFAULT_RC_THRESHOLD) -> float:
    """
    Critical generation rate: zero crossing of the linear trend of eta(R).

    Args:
        sweep: Iterable of (R, eta) pairs
        threshold: Only points with eta > threshold enter the fit

    Raises:
        ValueError: If fewer than 3 points are congested or the slope is not positive
    """
    points = np.array([(r, eta) for r, eta in sweep if eta > threshold], dtype=float).reshape(-1, 2)
    if len(points) < 3:
        raise ValueError(f"no congested points: {len(points)} points with eta > {threshold}, need 3")
    fit = stats.linregress(points[:, 0], points[:, 1])
    if fit.slope <= 0:
        raise ValueError(f"nonpositive slope {fit.slope:.4g} in the congested branch")
    return float(-fit.intercept / fit.slope)


def timeseries_frame(counters: TrafficCounters) -> pd.DataFrame:
    return pd.DataFrame({
        "t": np.arange(1, len(counters.w_series) + 1),
        "W": counters.w_series,
        "in_transit": counters.in_transit_series,
        "delivered": counters.delivered_series,
        "dropped": counters.dropped_series,
    })


def traveltime_frame(counters: TrafficCounters, strategy, rate) -> pd.DataFrame:
    hist = counters.travel_time_hist()
    return pd.DataFrame({
        "strategy": strategy,
        "R": rate,
        "T": list(hist.keys()),
        "count": list(hist.values()),
    }, columns=["strategy", "R", "T", "count"])


def loss_by_bc_frame(bc, drops, bins=20) -> pd.DataFrame:
    """Cumulative drops per BC bin."""
    edges = np.linspace(0.0, max(float(np.max(bc)), 1e-12), bins + 1)
    totals, _ = np.histogram(bc, bins=edges, weights=np.asarray(drops, dtype=float))
    return pd.DataFrame({
        "bc_bin_low": edges[:-1],
        "bc_bin_high": edges[1:],
        "cum_dropped": totals.astype(np.int64),
    })
