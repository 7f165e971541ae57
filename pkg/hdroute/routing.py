# Routing structures: SP sampling, beta-hierarchical bypass tables, LD tables
from __future__ import annotations

import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from hdroute.graph import Network, SPCounts, shortest_path_counts

logger = logging.getLogger(__name__)

DEFAULT_BETA_SET = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0)
SUPPORTED_WEIGHTINGS = ("bc", "degree")

# rank value of nodes that host no agent
NO_RANK = np.iinfo(np.int64).max

MIN_INTERCEPTED_PAIRS = 10


@dataclass(frozen=True)
class RLNodeSet:
    """
    The K highest-BC nodes, in descending BC order (ties to lower id).

    rank[v] is the position of v in nodes, or NO_RANK if v hosts no agent.
    """

    nodes: tuple
    rank: np.ndarray

    @property
    def K(self) -> int:
        return len(self.nodes)

    def __contains__(self, node) -> bool:
        return self.rank[node] != NO_RANK

    def designated(self, path) -> int:
        """Highest-BC RL node strictly inside path, or -1 if there is none."""
        if len(path) < 3:
            return -1
        interior = np.asarray(path[1:-1])
        ranks = self.rank[interior]
        i = int(np.argmin(ranks))
        if ranks[i] == NO_RANK:
            return -1
        return int(interior[i])


@dataclass(frozen=True, eq=False)
class RoutingTables:
    """
    Next-hop tables of every routing strategy on one network.

    Attributes:
        network: Network the tables were built on (never updated after link removal)
        beta_set: Ordered beta values; next_hop[i] realizes beta_set[i]
        next_hop: int32 array (len(beta_set), N, N); next_hop[i, x, d] is the
            next node from x toward d
        counts: All-pairs distances and SP counts for uniform SP sampling
        ld_next_hop: int32 array (N, N) for least-degree routing
        weighting: Node weight used for bypasses, "bc" or "degree"
    """

    network: Network
    beta_set: tuple
    next_hop: np.ndarray
    counts: SPCounts
    ld_next_hop: np.ndarray
    weighting: str = "bc"

    def beta_index(self, beta) -> int:
        for i, value in enumerate(self.beta_set):
            if np.isclose(value, beta):
                return i
        raise ValueError(f"beta {beta} is not in the beta set {self.beta_set}")

    def chain(self, beta_index, x, d) -> list:
        """Node sequence from x to d following the beta table."""
        return _follow(self.next_hop[beta_index], x, d)

    def ld_chain(self, x, d) -> list:
        return _follow(self.ld_next_hop, x, d)


@dataclass(frozen=True)
class BypassDegeneracy:
    """
    Mean BC along beta-bypasses around each RL node.

    mean_bc[k, i] averages, over sampled pairs whose designated bypass node
    is nodes[k], the mean BC of the interior nodes of the beta_set[i] bypass.
    """

    nodes: tuple
    beta_set: tuple
    mean_bc: np.ndarray
    sample_count: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"node": node, "beta": beta, "mean_bc": self.mean_bc[k, i], "pairs": int(self.sample_count[k])}
            for k, node in enumerate(self.nodes)
            for i, beta in enumerate(self.beta_set)
        ]
        return pd.DataFrame(rows, columns=["node", "beta", "mean_bc", "pairs"])


def _follow(table, x, d) -> list:
    n = table.shape[0]
    path = [int(x)]
    while x != d:
        x = int(table[x, d])
        path.append(x)
        if len(path) > n:
            raise RuntimeError(f"next-hop chain toward {d} does not terminate: {path[:10]}...")
    return path


def select_rl_nodes(net: Network, K) -> RLNodeSet:
    """
    Select the K highest-BC nodes (BC descending, id ascending).

    Raises:
        ValueError: If K < 1 or K > max(1, N // 10)
    """
    limit = max(1, net.node_count // 10)
    if not 1 <= K <= limit:
        raise ValueError(f"K must be in [1, {limit}] for N={net.node_count}, got {K}")

    order = np.lexsort((np.arange(net.node_count), -net.bc))
    nodes = tuple(int(v) for v in order[:K])
    rank = np.full(net.node_count, NO_RANK, dtype=np.int64)
    rank[list(nodes)] = np.arange(K)
    return RLNodeSet(nodes=nodes, rank=rank)


def empty_rl_set(net: Network) -> RLNodeSet:
    """RL node set with no agents (K = 0)."""
    return RLNodeSet(nodes=(), rank=np.full(net.node_count, NO_RANK, dtype=np.int64))


def _tree_toward(adj, weights, dest) -> list:
    """
    Node-weighted Dijkstra toward dest.

    The cost of moving onto node v is weights[v]. Labels compare as
    (cost, hops, next hop id), so zero-weight nodes cannot create loops and
    ties go to fewer hops, then to the smaller next hop.

    Returns:
        list: next hop toward dest for every node (dest maps to itself)
    """
    n = len(adj)
    best = [(float("inf"), 0, 0)] * n
    next_hop = [-1] * n
    settled = [False] * n
    best[dest] = (0.0, 0, dest)
    heap = [(0.0, 0, dest, dest)]
    while heap:
        cost, hops, via, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        next_hop[u] = via
        onward = (cost + weights[u], hops + 1, u)
        for x in adj[u]:
            if not settled[x] and onward < best[x]:
                best[x] = onward
                heapq.heappush(heap, (onward[0], onward[1], u, x))
    return next_hop


def _columns(adj, weights, dests):
    return [_tree_toward(adj, weights, d) for d in dests]


def _next_hop_matrix(net: Network, weights, workers=1) -> np.ndarray:
    """Next-hop matrix for node weights, one Dijkstra per destination."""
    n = net.node_count
    adj = [nbrs.tolist() for nbrs in net.adjacency]
    weights = [float(w) for w in weights]
    table = np.empty((n, n), dtype=np.int32)

    if workers > 1:
        chunks = [list(range(start, n, workers)) for start in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_columns, [adj] * workers, [weights] * workers, chunks)
            for dests, columns in zip(chunks, results):
                for d, column in zip(dests, columns):
                    table[:, d] = column
    else:
        for d in range(n):
            table[:, d] = _tree_toward(adj, weights, d)
    return table


def node_weights(net: Network, beta, weighting="bc") -> np.ndarray:
    """Per-node weight b(v)**beta (or degree**beta); 0**0 is 1."""
    if weighting == "bc":
        base = net.bc
    elif weighting == "degree":
        base = net.degrees.astype(float)
    else:
        raise ValueError(f"unsupported bypass weighting: {weighting}")
    return np.power(base, float(beta))


def build_ld_table(net: Network, workers=1) -> np.ndarray:
    """Static least-degree next-hop matrix (node weight = degree)."""
    return _next_hop_matrix(net, net.degrees.astype(float), workers=workers)


def build_bypass_tables(net: Network, beta_set=DEFAULT_BETA_SET, *, weighting="bc", workers=1) -> RoutingTables:
    """
    Build the beta-hierarchical bypass tables, SP counts and the LD table.

    For every beta, next_hop[beta][x, d] minimizes the sum of node weights
    b(v)**beta along the path from x to d. The source term is a constant per
    pair and is left out.

    Args:
        net: Network with betweenness computed
        beta_set: Ordered beta values
        weighting: "bc" (default) or "degree"
        workers: Processes used per table (destinations are split among them)

    Returns:
        RoutingTables: Immutable tables shared by all simulations on net
    """
    beta_set = tuple(float(b) for b in beta_set)
    if not beta_set:
        raise ValueError("beta_set cannot be empty")
    if any(b < 0 for b in beta_set):
        raise ValueError("beta values must be non-negative")

    tables = np.empty((len(beta_set), net.node_count, net.node_count), dtype=np.int32)
    for i, beta in enumerate(beta_set):
        tables[i] = _next_hop_matrix(net, node_weights(net, beta, weighting), workers=workers)
        logger.debug("%s: built bypass table beta=%g", net.name, beta)

    result = RoutingTables(
        network=net,
        beta_set=beta_set,
        next_hop=tables,
        counts=shortest_path_counts(net),
        ld_next_hop=build_ld_table(net, workers=workers),
        weighting=weighting,
    )
    logger.info("%s: built %d bypass tables on %d nodes", net.name, len(beta_set), net.node_count)
    return result


def sample_pair(n, rng) -> tuple:
    """Uniform ordered pair (s, d) with s != d."""
    s = int(rng.integers(n))
    d = int(rng.integers(n - 1))
    if d >= s:
        d += 1
    return s, d


def sample_sp(tables: RoutingTables, s, d, rng) -> list:
    """
    Draw a shortest path from s to d uniformly among all shortest paths.

    Walks the predecessor DAG backward from d, choosing predecessor u of w
    with probability sigma[s, u] / sigma[s, w].

    Raises:
        ValueError: If s == d
    """
    if s == d:
        raise ValueError("source and destination must differ")

    adjacency = tables.network.adjacency
    dist = tables.counts.dist[s]
    sigma = tables.counts.sigma[s]
    path = [int(d)]
    w = d
    while w != s:
        nbrs = adjacency[w]
        preds = nbrs[dist[nbrs] == dist[w] - 1]
        if len(preds) == 1:
            w = int(preds[0])
        else:
            cumulative = np.cumsum(sigma[preds])
            w = int(preds[np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right")])
        path.append(w)
    path.reverse()
    return path


def bypass_degeneracy(tables: RoutingTables, rl_set: RLNodeSet, n_samples, rng) -> BypassDegeneracy:
    """
    Average BC along the beta-bypasses of each RL node over sampled pairs.

    A sampled pair counts for the RL node designated on its sampled SP; the
    bypass starts at the node x preceding it. For beta = 0 the SP remainder
    from x is used.

    Args:
        tables: Routing tables
        rl_set: RL nodes
        n_samples: Number of (s, d) pairs drawn
        rng: numpy Generator

    Returns:
        BypassDegeneracy: mean BC per (RL node, beta), nan where no pair was intercepted
    """
    net = tables.network
    sums = np.zeros((rl_set.K, len(tables.beta_set)))
    counts = np.zeros(rl_set.K, dtype=np.int64)

    for _ in range(n_samples):
        s, d = sample_pair(net.node_count, rng)
        path = sample_sp(tables, s, d, rng)
        node = rl_set.designated(path)
        if node < 0:
            continue
        k = int(rl_set.rank[node])
        i = path.index(node)
        counts[k] += 1
        for b, beta in enumerate(tables.beta_set):
            bypass = path[i - 1:] if beta == 0 else tables.chain(b, path[i - 1], d)
            sums[k, b] += net.bc[bypass[1:-1]].mean()

    for k, node in enumerate(rl_set.nodes):
        if counts[k] < MIN_INTERCEPTED_PAIRS:
            logger.warning("RL node %d intercepted only %d sampled pairs", node, counts[k])

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_bc = sums / counts[:, None]
    return BypassDegeneracy(
        nodes=rl_set.nodes,
        beta_set=tables.beta_set,
        mean_bc=mean_bc,
        sample_count=counts,
    )


def export_next_hops(tables: RoutingTables, beta=None) -> pd.DataFrame:
    """
    One next-hop table as a frame with columns from,to,next.

    beta=None exports the least-degree table.
    """
    table = tables.ld_next_hop if beta is None else tables.next_hop[tables.beta_index(beta)]
    n = table.shape[0]
    src, dst = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = src != dst
    frame = pd.DataFrame({"from": src[mask], "to": dst[mask], "next": table[mask]})
    return frame
