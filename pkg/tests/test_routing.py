"""
Test suite for routing structures.

This module tests behavioral contracts for:
- RL node selection and designated-node lookup
- Beta-hierarchical bypass tables (optimality, beta=0 equals SP)
- Least-degree tables
- Uniform shortest-path sampling
- Bypass degeneracy and next-hop export
"""

import logging
import os
import tempfile

import networkx as nx
import numpy as np
import pandas as pd
import pytest


def _connected_graphs(count, n_max, seed):
    rng = np.random.default_rng(seed)
    graphs = []
    while len(graphs) < count:
        n = int(rng.integers(4, n_max + 1))
        g = nx.gnp_random_graph(n, float(rng.uniform(0.25, 0.5)), seed=int(rng.integers(10**6)))
        if nx.is_connected(g):
            graphs.append(g)
    return graphs


def _hub_ring():
    """Ring 0..5 with a hub 6 joined to 0 and 3 and carrying leaves 7..10."""
    from hdroute.graph import build_network

    edges = [(i, (i + 1) % 6) for i in range(6)] + [(6, 0), (6, 3)] + [(6, leaf) for leaf in range(7, 11)]
    return build_network(11, edges)


def _wheel():
    """Hub 0 with spokes 1..4, each pair of neighbouring spokes joined through one of 5..8."""
    from hdroute.graph import build_network

    ring = [(1, 5), (5, 2), (2, 6), (6, 3), (3, 7), (7, 4), (4, 8), (8, 1)]
    return build_network(9, [(0, v) for v in range(1, 5)] + ring)


# ============================================================================
# RL node selection
# ============================================================================

def test_select_rl_nodes_on_star_picks_center():
    """Test that K=1 on the star S4 selects the center."""
    from hdroute.graph import build_network
    from hdroute.routing import select_rl_nodes

    net = build_network(5, [(0, v) for v in range(1, 5)])
    rl_set = select_rl_nodes(net, 1)

    assert rl_set.nodes == (0,), "the star center has the highest BC"
    assert 0 in rl_set and 1 not in rl_set, "membership follows the selection"


def test_select_rl_nodes_breaks_ties_by_lower_id():
    """Test that equal BC values are ordered by node id."""
    from hdroute.graph import build_network
    from hdroute.routing import select_rl_nodes

    net = build_network(20, [(i, (i + 1) % 20) for i in range(20)])

    assert select_rl_nodes(net, 2).nodes == (0, 1), "ring nodes tie, lower ids win"


def test_select_rl_nodes_orders_by_descending_bc():
    """Test that selected nodes come in descending BC order."""
    from hdroute.graph import generate_ba
    from hdroute.routing import select_rl_nodes

    net = generate_ba(200, 2, seed=0)
    rl_set = select_rl_nodes(net, 10)
    values = net.bc[list(rl_set.nodes)]

    assert np.all(np.diff(values) <= 0), "RL nodes must be sorted by BC"
    outside = np.setdiff1d(np.arange(net.node_count), rl_set.nodes)
    assert values.min() >= net.bc[outside].max(), "no unselected node may outrank a selected one"


def test_select_rl_nodes_rejects_invalid_k():
    """Test that K < 1 or K > N/10 raises ValueError."""
    from hdroute.graph import generate_ba
    from hdroute.routing import select_rl_nodes

    net = generate_ba(50, 2, seed=0)

    with pytest.raises(ValueError, match="K must be"):
        select_rl_nodes(net, 0)
    with pytest.raises(ValueError, match="K must be"):
        select_rl_nodes(net, 6)


def test_designated_node_is_highest_ranked_interior_node():
    """Test that designated() returns the highest-BC RL node strictly inside the path."""
    from hdroute.graph import generate_ba
    from hdroute.routing import select_rl_nodes

    net = generate_ba(100, 2, seed=3)
    rl_set = select_rl_nodes(net, 3)
    top, second, third = rl_set.nodes
    others = [v for v in range(net.node_count) if v not in rl_set][:2]

    assert rl_set.designated([others[0], third, second, others[1]]) == second, "rank decides"
    assert rl_set.designated([top, third, others[1]]) == third, "endpoints are not interior"
    assert rl_set.designated([others[0], others[1]]) == -1, "a single hop has no interior"


# ============================================================================
# Bypass and LD tables
# ============================================================================

def test_ld_avoids_hub_where_sp_crosses_it():
    """Test that LD routes around a high-degree hub that SP goes through."""
    from hdroute.routing import build_bypass_tables

    tables = build_bypass_tables(_hub_ring())

    assert tables.chain(tables.beta_index(0.0), 0, 3) == [0, 6, 3], "SP takes the two-hop route via the hub"
    assert tables.ld_chain(0, 3) == [0, 1, 2, 3], "LD pays degree 2+2+3 instead of 6+3"


def test_beta_zero_chain_length_equals_bfs_distance():
    """Test that beta=0 chains are shortest paths for every pair."""
    from hdroute.graph import generate_ba, shortest_path_counts
    from hdroute.routing import build_bypass_tables

    net = generate_ba(150, 2, seed=6)
    tables = build_bypass_tables(net, (0.0,))
    dist = shortest_path_counts(net).dist

    for s in range(0, net.node_count, 7):
        for d in range(net.node_count):
            if s != d:
                assert len(tables.chain(0, s, d)) - 1 == dist[s, d], f"beta=0 chain {s}->{d} is not shortest"


def test_bypass_tables_minimize_node_weight_sum():
    """Test every chain against the minimum over all simple paths, for every beta."""
    from hdroute.graph import build_network
    from hdroute.routing import DEFAULT_BETA_SET, build_bypass_tables, node_weights

    for g in _connected_graphs(30, 8, seed=21):
        net = build_network(g.number_of_nodes(), g.edges())
        tables = build_bypass_tables(net, DEFAULT_BETA_SET)
        weights = np.array([node_weights(net, beta) for beta in DEFAULT_BETA_SET])
        for x in range(net.node_count):
            for d in range(net.node_count):
                if x == d:
                    continue
                costs = np.array([weights[:, p[1:]].sum(axis=1) for p in nx.all_simple_paths(g, x, d)])
                best = costs.min(axis=0)
                for b, beta in enumerate(DEFAULT_BETA_SET):
                    chain = tables.chain(b, x, d)
                    assert len(set(chain)) == len(chain), "chains must be loop-free"
                    assert np.isclose(weights[b, chain[1:]].sum(), best[b], rtol=1e-9, atol=1e-12), \
                        f"beta={beta} chain {x}->{d} is not optimal"


def test_high_beta_bypass_avoids_hub():
    """Test that high-beta bypasses on the hub ring avoid the hub."""
    from hdroute.routing import build_bypass_tables

    tables = build_bypass_tables(_hub_ring())

    assert 6 not in tables.chain(tables.beta_index(2.0), 0, 3), "beta=2 must detour around the hub"


def test_degree_weighting_at_beta_one_equals_ld_table():
    """Test that degree weighting with beta=1 reproduces the LD table."""
    from hdroute.graph import generate_ba
    from hdroute.routing import build_bypass_tables

    net = generate_ba(80, 2, seed=2)
    tables = build_bypass_tables(net, (1.0,), weighting="degree")

    assert np.array_equal(tables.next_hop[0], tables.ld_next_hop), "degree^1 is the LD weight"


def test_parallel_table_build_matches_serial():
    """Test that splitting destinations over processes gives the same table."""
    from hdroute.graph import generate_ba
    from hdroute.routing import build_bypass_tables

    net = generate_ba(60, 2, seed=9)
    serial = build_bypass_tables(net, (0.0, 1.0))
    parallel = build_bypass_tables(net, (0.0, 1.0), workers=2)

    assert np.array_equal(serial.next_hop, parallel.next_hop), "worker count must not change tables"


def test_build_bypass_tables_rejects_bad_parameters():
    """Test that negative betas and unknown weightings raise ValueError."""
    from hdroute.routing import build_bypass_tables

    net = _hub_ring()

    with pytest.raises(ValueError, match="non-negative"):
        build_bypass_tables(net, (0.0, -1.0))
    with pytest.raises(ValueError, match="weighting"):
        build_bypass_tables(net, (0.0,), weighting="closeness")


def test_beta_index_rejects_unknown_beta():
    """Test that beta_index raises for a beta outside the set."""
    from hdroute.routing import build_bypass_tables

    tables = build_bypass_tables(_hub_ring(), (0.0, 1.0))

    with pytest.raises(ValueError, match="not in the beta set"):
        tables.beta_index(0.5)


# ============================================================================
# Shortest-path sampling
# ============================================================================

def test_sample_sp_splits_evenly_on_cycle():
    """Test that both shortest paths across C4 are drawn about equally often."""
    from hdroute.graph import build_network
    from hdroute.routing import build_bypass_tables, sample_sp

    net = build_network(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    tables = build_bypass_tables(net, (0.0,))
    rng = np.random.default_rng(0)

    draws = [tuple(sample_sp(tables, 0, 2, rng)) for _ in range(4000)]
    share = draws.count((0, 1, 2)) / len(draws)

    assert set(draws) == {(0, 1, 2), (0, 3, 2)}, "only the two shortest paths may be drawn"
    assert abs(share - 0.5) < 0.05, f"paths must be equally likely, got {share}"


def test_sample_sp_is_uniform_over_grid_paths():
    """Test uniform sampling on a 3x3 grid corner-to-corner (six shortest paths)."""
    from hdroute.graph import build_network
    from hdroute.routing import build_bypass_tables, sample_sp

    g = nx.convert_node_labels_to_integers(nx.grid_2d_graph(3, 3), ordering="sorted")
    net = build_network(9, g.edges())
    tables = build_bypass_tables(net, (0.0,))
    rng = np.random.default_rng(1)

    expected = {tuple(p) for p in nx.all_shortest_paths(g, 0, 8)}
    draws = pd.Series([tuple(sample_sp(tables, 0, 8, rng)) for _ in range(6000)])
    freq = draws.value_counts(normalize=True)

    assert set(freq.index) == expected, "every draw must be one of the six shortest paths"
    assert np.all(np.abs(freq.values - 1 / 6) < 0.03), "each shortest path has probability 1/6"


def test_sample_sp_rejects_equal_endpoints():
    """Test that sampling with s == d raises ValueError."""
    from hdroute.routing import build_bypass_tables, sample_sp

    tables = build_bypass_tables(_hub_ring(), (0.0,))

    with pytest.raises(ValueError, match="differ"):
        sample_sp(tables, 3, 3, np.random.default_rng(0))


def test_sample_pair_never_returns_equal_nodes():
    """Test that sampled pairs are distinct and cover all sources."""
    from hdroute.routing import sample_pair

    rng = np.random.default_rng(5)
    pairs = [sample_pair(6, rng) for _ in range(3000)]

    assert all(s != d for s, d in pairs), "source and destination must differ"
    assert {s for s, _ in pairs} == set(range(6)), "every node must appear as a source"


# ============================================================================
# Degeneracy and export
# ============================================================================

def test_bypass_degeneracy_frame_and_warning(caplog):
    """Test the degeneracy schema and the warning for rarely intercepted nodes."""
    from hdroute.graph import generate_ba
    from hdroute.routing import build_bypass_tables, bypass_degeneracy, select_rl_nodes

    net = generate_ba(120, 2, seed=1)
    tables = build_bypass_tables(net)
    rl_set = select_rl_nodes(net, 3)

    with caplog.at_level(logging.WARNING, logger="hdroute.routing"):
        result = bypass_degeneracy(tables, rl_set, 5, np.random.default_rng(0))
    frame = result.to_frame()

    assert list(frame.columns) == ["node", "beta", "mean_bc", "pairs"], "degeneracy schema"
    assert len(frame) == 3 * len(tables.beta_set), "one row per (node, beta)"
    assert "intercepted only" in caplog.text, "five samples cannot reach ten pairs per node"


def test_bypass_degeneracy_decreases_with_beta_for_top_node():
    """Test that larger beta bypasses the top node through lower-BC nodes."""
    from hdroute.graph import generate_ba
    from hdroute.routing import build_bypass_tables, bypass_degeneracy, select_rl_nodes

    net = generate_ba(300, 3, seed=0)
    tables = build_bypass_tables(net)
    result = bypass_degeneracy(tables, select_rl_nodes(net, 1), 3000, np.random.default_rng(2))
    curve = result.mean_bc[0]

    assert result.sample_count[0] >= 200, "the top node intercepts many sampled pairs"
    assert curve[0] > curve[-1], "beta=2 bypasses must have lower mean BC than SP"


def test_export_next_hops_covers_every_ordered_pair():
    """Test the exported frame schema and that LD is exported when beta is None."""
    from hdroute.routing import build_bypass_tables, export_next_hops

    tables = build_bypass_tables(_hub_ring(), (0.0, 1.0))
    frame = export_next_hops(tables)

    assert list(frame.columns) == ["from", "to", "next"], "export schema"
    assert len(frame) == 11 * 10, "one row per ordered pair"
    row = frame[(frame["from"] == 0) & (frame["to"] == 3)]
    assert row["next"].item() == 1, "the LD table sends 0 toward 3 via 1"
    sp_row = export_next_hops(tables, beta=0.0)
    sp_row = sp_row[(sp_row["from"] == 0) & (sp_row["to"] == 3)]
    assert sp_row["next"].item() == 6, "the beta=0 table crosses the hub"


def test_bypass_degeneracy_strictly_decreases_on_wheel():
    """Test that every beta step moves bypasses of a single hub onto lower-BC nodes."""
    from hdroute.routing import build_bypass_tables, bypass_degeneracy, select_rl_nodes

    net = _wheel()
    tables = build_bypass_tables(net, (0.0, 0.4, 1.0))
    rl_set = select_rl_nodes(net, 1)
    result = bypass_degeneracy(tables, rl_set, 2000, np.random.default_rng(3))

    assert net.bc == pytest.approx([8 / 21] + [5 / 28] * 4 + [1 / 21] * 4), "wheel betweenness"
    assert rl_set.nodes == (0,), "the hub is the only RL node"
    assert np.all(np.diff(result.mean_bc[0]) < 0), f"mean BC must fall with beta, got {result.mean_bc[0]}"


@pytest.mark.slow
def test_degeneracy_on_ba_1000_top_nodes():
    """Test that mean bypass BC strictly falls with beta for the top five BA nodes."""
    from hdroute.graph import generate_ba
    from hdroute.routing import build_bypass_tables, bypass_degeneracy, select_rl_nodes

    net = generate_ba(1000, 3, seed=0)
    tables = build_bypass_tables(net)
    result = bypass_degeneracy(tables, select_rl_nodes(net, 5), 20000, np.random.default_rng(0))

    assert np.all(result.sample_count >= 200), "each top node needs at least 200 pairs"
    for k in range(5):
        curve = result.mean_bc[k]
        assert curve[0] > curve[-1], f"node {result.nodes[k]}: beta=2 must beat beta=0"
        assert np.all(np.diff(curve) < 0), f"node {result.nodes[k]}: mean BC must fall at every beta step"


@pytest.mark.slow
def test_beta_zero_matches_bfs_on_ba_1000_sampled_pairs():
    """Test that beta=0 chains have BFS length for 10^4 random pairs on BA(1000, 3)."""
    from hdroute.graph import generate_ba
    from hdroute.routing import build_bypass_tables, sample_pair

    net = generate_ba(1000, 3, seed=4)
    tables = build_bypass_tables(net, (0.0,))
    rng = np.random.default_rng(11)

    mismatches = []
    for _ in range(10_000):
        s, d = sample_pair(net.node_count, rng)
        if len(tables.chain(0, s, d)) - 1 != tables.counts.dist[s, d]:
            mismatches.append((s, d))

    assert not mismatches, f"beta=0 chains longer than BFS distance: {mismatches[:5]}"
