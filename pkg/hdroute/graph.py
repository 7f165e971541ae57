# Network topologies: generation, loading, betweenness and degree statistics
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components, shortest_path

logger = logging.getLogger(__name__)

SUPPORTED_MODELS = ("BA", "CE", "ER")

# Sources processed together by one level-synchronous sweep.
SWEEP_BLOCK = 64


class EdgeListError(ValueError):
    """Raised when an edge-list file cannot be turned into a network."""


@dataclass(frozen=True, eq=False)
class Network:
    """
    Immutable undirected simple connected graph on dense ids 0..N-1.

    Attributes:
        adjacency: Per-node sorted neighbor arrays
        bc: Normalized betweenness centrality per node
        labels: Original node id for every dense id
        name: Human-readable network name used in reports
    """

    adjacency: tuple
    bc: np.ndarray
    labels: np.ndarray
    name: str = ""

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(nbrs) for nbrs in self.adjacency], dtype=np.int64)

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency matrix."""
        n = self.node_count
        rows = np.repeat(np.arange(n), self.degrees)
        cols = np.concatenate(self.adjacency) if n else np.empty(0, dtype=np.int64)
        data = np.ones(len(cols))
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def edges(self) -> np.ndarray:
        """Edge array of shape (E, 2) with u < v, sorted lexicographically."""
        pairs = [(u, int(v)) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u < v]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def has_edge(self, u: int, v: int) -> bool:
        nbrs = self.adjacency[u]
        i = np.searchsorted(nbrs, v)
        return bool(i < len(nbrs) and nbrs[i] == v)


@dataclass(frozen=True)
class DegreeDistributionSpec:
    """
    Parameters of a synthetic degree distribution.

    For CE the density is a mixture over tiers j = 0..J of exponentials with
    rate lam**(j+1), weighted by a**-(j+1). kmin shifts the support.
    """

    model: str
    m: int = 3
    J: int = 3
    a: float = 1000.0
    lam: float = 0.2
    mean_degree: float = 6.0
    kmin: float = 0.0

    def tier_weights(self) -> np.ndarray:
        exponents = np.arange(self.J + 1) + 1.0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            weights = np.power(float(self.a), -exponents)
        return weights

    def tier_rates(self) -> np.ndarray:
        exponents = np.arange(self.J + 1) + 1.0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return np.power(float(self.lam), exponents)


@dataclass(frozen=True)
class DegreeStats:
    mean_degree: float
    mean_sp_length: float
    rsd: float
    heterogeneity: float


@dataclass(frozen=True)
class SPCounts:
    """
    All-pairs hop distances and shortest-path counts.

    dist[s, v] is l(s, v); sigma[s, v] is the number of shortest paths
    from s to v, with sigma[s, s] = 1.
    """

    dist: np.ndarray
    sigma: np.ndarray


def build_network(node_count, edges, *, labels=None, name="", with_bc=True) -> Network:
    """
    Build a Network from dense-id edges.

    Args:
        node_count: Number of nodes N
        edges: Iterable of (u, v) pairs with 0 <= u, v < N
        labels: Optional original ids, one per node
        name: Network name
        with_bc: Compute betweenness centrality eagerly

    Returns:
        Network: The constructed network

    Raises:
        ValueError: If an edge is out of range, a self-loop, or the graph is disconnected
    """
    if node_count <= 0:
        raise ValueError("node_count must be greater than 0")

    neighbors = [set() for _ in range(node_count)]
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < node_count and 0 <= v < node_count):
            raise ValueError(f"edge ({u}, {v}) references a node outside 0..{node_count - 1}")
        if u == v:
            raise ValueError(f"self-loop at node {u}")
        neighbors[u].add(v)
        neighbors[v].add(u)

    adjacency = tuple(np.array(sorted(nbrs), dtype=np.int64) for nbrs in neighbors)
    if labels is None:
        labels = np.arange(node_count)
    net = Network(
        adjacency=adjacency,
        bc=np.zeros(node_count),
        labels=np.asarray(labels),
        name=name,
    )

    n_components, _ = connected_components(net.matrix, directed=False)
    if n_components != 1:
        raise ValueError(f"network is not connected ({n_components} components)")

    if with_bc:
        net = with_betweenness(net)
    return net


def _from_nx(graph: nx.Graph, name: str) -> Network:
    """Reduce a networkx graph to its largest connected component on dense ids."""
    if graph.number_of_nodes() == 0:
        raise ValueError("graph has no nodes")

    components = list(nx.connected_components(graph))
    largest = max(components, key=lambda comp: (len(comp), -min(comp)))
    if len(largest) < graph.number_of_nodes():
        logger.info(
            "%s: kept largest connected component with %d of %d nodes",
            name, len(largest), graph.number_of_nodes(),
        )

    labels = np.array(sorted(largest))
    index = {label: i for i, label in enumerate(labels.tolist())}
    edges = [
        (index[u], index[v])
        for u, v in graph.subgraph(largest).edges()
        if u != v
    ]
    return build_network(len(labels), edges, labels=labels, name=name)


def generate_ba(n, m, seed) -> Network:
    """
    Generate a Barabasi-Albert network grown from a complete graph on m+1 nodes.

    Args:
        n: Number of nodes
        m: Edges attached by every new node
        seed: RNG seed

    Returns:
        Network: Connected BA network with mean degree close to 2m

    Raises:
        ValueError: If n <= m or m < 1
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if n <= m:
        raise ValueError(f"n ({n}) must be greater than m ({m})")

    graph = nx.barabasi_albert_graph(n, m, seed=seed, initial_graph=nx.complete_graph(m + 1))
    return _from_nx(graph, name="BA")


def sample_ce_degrees(n, spec: DegreeDistributionSpec, rng) -> np.ndarray:
    """
    Draw an even-sum integer degree sequence from the composite exponential density.

    Raises:
        ValueError: If the tier weights or rates are not finite and positive
    """
    if spec.J < 0:
        raise ValueError("J must be non-negative")

    weights = spec.tier_weights()
    rates = spec.tier_rates()
    if not (np.all(np.isfinite(weights)) and np.all(weights > 0) and np.isfinite(weights.sum())):
        raise ValueError(f"CE weights a^-(j+1) are not normalizable for a={spec.a}, J={spec.J}")
    if not (np.all(np.isfinite(rates)) and np.all(rates > 0)):
        raise ValueError(f"CE rates lam^(j+1) must be finite and positive for lam={spec.lam}")

    tiers = rng.choice(spec.J + 1, size=n, p=weights / weights.sum())
    draws = rng.exponential(1.0 / rates[tiers])
    degrees = np.maximum(1, np.rint(spec.kmin + draws)).astype(np.int64)
    # configuration model needs an even stub count
    if degrees.sum() % 2:
        degrees[rng.integers(n)] += 1
    return degrees


def generate_ce(n, spec: DegreeDistributionSpec, seed) -> Network:
    """
    Generate a configuration-model network with a CE-J degree sequence.

    Self-loops and multi-edges are removed without rewiring and the
    largest connected component is returned.

    Raises:
        ValueError: If spec is not a CE spec or its weights are not normalizable
    """
    if spec.model != "CE":
        raise ValueError(f"generate_ce requires a CE spec, got {spec.model}")
    if n < 2:
        raise ValueError("n must be at least 2")

    rng = np.random.default_rng(seed)
    degrees = sample_ce_degrees(n, spec, rng)
    multigraph = nx.configuration_model(degrees.tolist(), seed=int(rng.integers(2**31 - 1)))
    graph = nx.Graph(multigraph)
    graph.remove_edges_from(list(nx.selfloop_edges(graph)))
    return _from_nx(graph, name=f"CE-{spec.J}")


def generate_er(n, mean_degree, seed) -> Network:
    """
    Generate G(n, p) with p = mean_degree / (n - 1), reduced to its LCC.

    Raises:
        ValueError: If n < 2 or mean_degree is outside (0, n-1]
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if not 0 < mean_degree <= n - 1:
        raise ValueError(f"mean_degree must be in (0, {n - 1}], got {mean_degree}")
    if mean_degree < 2:
        logger.warning("ER mean degree %.2f < 2: the largest component may be small", mean_degree)

    graph = nx.gnp_random_graph(n, mean_degree / (n - 1), seed=seed)
    return _from_nx(graph, name="ER")


def load_edge_list(path) -> Network:
    """
    Load an undirected network from a whitespace-separated edge list.

    Lines starting with '#' and blank lines are ignored. Arbitrary integer ids
    are remapped to dense ids; the original ids are kept in Network.labels.

    Raises:
        EdgeListError: On a malformed line (with its line number) or an empty graph
        FileNotFoundError: If path does not exist
    """
    path = Path(path)
    graph = nx.Graph()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split()
            if len(fields) < 2:
                raise EdgeListError(f"{path}:{line_no}: expected two node ids, got {text!r}")
            try:
                u, v = int(fields[0]), int(fields[1])
            except ValueError:
                raise EdgeListError(f"{path}:{line_no}: node ids must be integers, got {text!r}") from None
            if u != v:
                graph.add_edge(u, v)

    if graph.number_of_edges() == 0:
        raise EdgeListError(f"{path}: edge list contains no edges")
    return _from_nx(graph, name=path.stem)


def write_edge_list(net: Network, path) -> None:
    """Write the network as 'u v' lines on dense ids."""
    frame = pd.DataFrame(net.edges, columns=["u", "v"])
    frame.to_csv(path, sep=" ", header=False, index=False)


def _sweep(matrix, sources, accumulate):
    """
    Level-synchronous BFS from a block of sources with Brandes accumulation.

    Returns:
        tuple: (dist, sigma, dependency) arrays of shape (len(sources), N);
        dependency[i, v] is the pair dependency of source i on v
    """
    n = matrix.shape[0]
    rows = np.arange(len(sources))
    dist = np.full((len(sources), n), -1, dtype=np.int32)
    sigma = np.zeros((len(sources), n))
    dist[rows, sources] = 0
    sigma[rows, sources] = 1.0

    frontier = np.zeros((len(sources), n), dtype=bool)
    frontier[rows, sources] = True
    levels = [frontier]
    while True:
        reach = np.asarray(matrix @ (sigma * frontier).T).T
        frontier = (reach > 0) & (dist < 0)
        if not frontier.any():
            break
        dist[frontier] = len(levels)
        sigma[frontier] = reach[frontier]
        levels.append(frontier)

    dependency = np.zeros_like(sigma)
    if accumulate:
        safe_sigma = np.where(sigma > 0, sigma, 1.0)
        for depth in range(len(levels) - 1, 1, -1):
            coef = np.where(levels[depth], (1.0 + dependency) / safe_sigma, 0.0)
            pulled = np.asarray(matrix @ coef.T).T
            parents = levels[depth - 1]
            dependency[parents] += sigma[parents] * pulled[parents]
    return dist, sigma, dependency


def _source_blocks(n):
    return [np.arange(start, min(n, start + SWEEP_BLOCK)) for start in range(0, n, SWEEP_BLOCK)]


def raw_betweenness(net: Network, workers=1) -> np.ndarray:
    """
    Exact betweenness over ordered pairs, before normalization.

    Sources are processed in blocks; blocks may run on a thread pool and are
    reduced by summation.
    """
    def block_bc(sources):
        return _sweep(net.matrix, sources, accumulate=True)[2].sum(axis=0)

    blocks = _source_blocks(net.node_count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(block_bc, blocks))
    else:
        partials = [block_bc(sources) for sources in blocks]
    return np.sum(partials, axis=0)


def betweenness(net: Network, workers=1) -> np.ndarray:
    """
    Normalized betweenness centrality b(v) via Brandes' accumulation.

    Ordered-pair counts are divided by (N-1)(N-2), which equals the
    2/[(N-1)(N-2)] normalization of unordered-pair betweenness.

    Args:
        net: Connected network
        workers: Threads used for the per-source reduction

    Returns:
        np.ndarray: b(v) in [0, 1] per node
    """
    n = net.node_count
    if n < 3:
        return np.zeros(n)
    return raw_betweenness(net, workers=workers) / ((n - 1) * (n - 2))


def with_betweenness(net: Network, workers=1) -> Network:
    """Return a copy of net carrying its normalized betweenness."""
    return replace(net, bc=betweenness(net, workers=workers))


def shortest_path_counts(net: Network) -> SPCounts:
    """All-pairs hop distances and shortest-path counts (no accumulation)."""
    n = net.node_count
    dist = np.empty((n, n), dtype=np.int32)
    sigma = np.empty((n, n))
    for sources in _source_blocks(n):
        block_dist, block_sigma, _ = _sweep(net.matrix, sources, accumulate=False)
        dist[sources] = block_dist
        sigma[sources] = block_sigma
    return SPCounts(dist=dist, sigma=sigma)


def degree_stats(net: Network, block=512) -> DegreeStats:
    """
    Table-style degree statistics of a connected network.

    Returns:
        DegreeStats: mean degree, exact mean shortest-path length,
        degree relative standard deviation and H = <k^2>/<k>^2
    """
    n = net.node_count
    degrees = net.degrees.astype(float)
    mean = degrees.mean()

    total = 0.0
    for start in range(0, n, block):
        indices = np.arange(start, min(n, start + block))
        total += shortest_path(net.matrix, directed=False, unweighted=True, indices=indices).sum()
    mean_sp = total / (n * (n - 1)) if n > 1 else 0.0

    return DegreeStats(
        mean_degree=float(mean),
        mean_sp_length=float(mean_sp),
        rsd=float(degrees.std() / mean),
        heterogeneity=float(np.mean(degrees**2) / mean**2),
    )


def powerlaw_exponent(degrees, kmin) -> float:
    """Discrete maximum-likelihood power-law exponent over degrees >= kmin."""
    tail = np.asarray(degrees, dtype=float)
    tail = tail[tail >= kmin]
    if len(tail) == 0:
        raise ValueError(f"no degrees >= kmin={kmin}")
    return float(1.0 + len(tail) / np.sum(np.log(tail / (kmin - 0.5))))


def table_row(net: Network, stats: DegreeStats) -> dict:
    return {
        "name": net.name,
        "N": net.node_count,
        "mean_degree": round(stats.mean_degree, 4),
        "mean_sp_len": round(stats.mean_sp_length, 4),
        "rsd": round(stats.rsd, 4),
        "H": round(stats.heterogeneity, 4),
    }


def calibrate_ce(
    J, target_mean, target_h, a_grid, lam_grid, *, n=1000, seeds=(0, 1, 2), kmin=0.0, target_rsd=None
):
    """
    Grid search of CE-J parameters (a, lam) against a target mean degree and H.

    Every grid point is scored by the squared relative error of the seed-averaged
    mean degree and heterogeneity of the generated networks. When target_rsd is
    given its squared relative error is added to the score. Since H = 1 + RSD^2
    for any degree sequence, an RSD target only matters when it disagrees with
    target_h.

    Returns:
        pd.DataFrame: One row per grid point (a, lam, mean_degree, H, rsd, score),
        best first
    """
    rows = []
    for a in a_grid:
        for lam in lam_grid:
            spec = DegreeDistributionSpec(model="CE", J=J, a=a, lam=lam, kmin=kmin)
            samples = []
            for seed in seeds:
                degrees = _ce_lcc_degrees(n, spec, seed)
                mean = degrees.mean()
                samples.append((mean, np.mean(degrees**2) / mean**2, degrees.std() / mean))
            mean, h, rsd = np.mean(samples, axis=0)
            score = ((mean - target_mean) / target_mean) ** 2 + ((h - target_h) / target_h) ** 2
            if target_rsd is not None:
                score += ((rsd - target_rsd) / target_rsd) ** 2
            rows.append({"a": a, "lam": lam, "mean_degree": mean, "H": h, "rsd": rsd, "score": score})
            logger.debug("CE-%d a=%g lam=%g -> mean=%.3f H=%.3f rsd=%.3f", J, a, lam, mean, h, rsd)

    return pd.DataFrame(rows).sort_values("score", kind="mergesort").reset_index(drop=True)


def _ce_lcc_degrees(n, spec, seed) -> np.ndarray:
    """Degree sequence of a generated CE network without computing betweenness."""
    rng = np.random.default_rng(seed)
    degrees = sample_ce_degrees(n, spec, rng)
    graph = nx.Graph(nx.configuration_model(degrees.tolist(), seed=int(rng.integers(2**31 - 1))))
    graph.remove_edges_from(list(nx.selfloop_edges(graph)))
    largest = max(nx.connected_components(graph), key=len)
    return np.array([d for _, d in graph.subgraph(largest).degree()], dtype=float)
