# Scenario runners: capacity sweeps, action census, resilience and distribution reports
from __future__ import annotations

import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.distance import jensenshannon

from hdroute.agent import (
    action_distribution,
    create_agents,
    episode_loop,
    run_policy,
    save_checkpoint,
)
from hdroute.config import ConfigError, ScenarioConfig
from hdroute.graph import (
    Network,
    degree_stats,
    generate_ba,
    generate_ce,
    generate_er,
    load_edge_list,
    powerlaw_exponent,
    table_row,
)
from hdroute.routing import (
    RoutingTables,
    build_bypass_tables,
    bypass_degeneracy,
    select_rl_nodes,
)
from hdroute.traffic import (
    SUPPORTED_STRATEGIES,
    Simulator,
    estimate_rc,
    loss_by_bc_frame,
    order_parameter,
    remove_links,
    timeseries_frame,
    traveltime_frame,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
NO_REMOVAL = "none"
STATS_COLUMNS = ("name", "N", "mean_degree", "mean_sp_len", "rsd", "H")


@dataclass(frozen=True)
class Cell:
    """One independent job of a scenario grid."""

    strategy: str
    K: int
    r_over_n: float
    seed: int
    network_seed: int

    def seed_sequence(self) -> np.random.SeedSequence:
        """
        Random streams depend only on the cell, never on grid order.

        HD without agents draws SP's streams, so both produce the same traffic.
        """
        strategy = "SP" if self.strategy == "HD" and self.K == 0 else self.strategy
        return np.random.SeedSequence([
            self.seed,
            SUPPORTED_STRATEGIES.index(strategy),
            self.K,
            int(round(self.r_over_n * 1e9)),
            self.network_seed,
        ])

    @property
    def label(self) -> str:
        return f"{self.strategy}_K{self.K}_r{self.r_over_n:g}_seed{self.seed}_net{self.network_seed}"


@dataclass(frozen=True)
class SweepResult:
    """
    Capacity sweep output.

    Attributes:
        rows: One eta measurement per grid cell
        capacities: R_c and relative gain over SP per (strategy, K, network seed)
        summary: capacities averaged over network seeds
    """

    rows: pd.DataFrame
    capacities: pd.DataFrame
    summary: pd.DataFrame


def build_network_from_config(config: ScenarioConfig, network_seed) -> Network:
    """
    Generate or load the network a scenario runs on.

    Raises:
        ConfigError: If a K in k_list exceeds max(1, N // 10) for the built network
    """
    if config.network == "ba":
        net = generate_ba(config.n, config.m, network_seed)
    elif config.network == "ce":
        net = generate_ce(config.n, config.degree_spec(), network_seed)
    elif config.network == "er":
        net = generate_er(config.n, config.mean_degree, network_seed)
    else:
        net = load_edge_list(config.edge_list)

    limit = max(1, net.node_count // 10)
    if any(k > limit for k in config.k_list):
        raise ConfigError(f"k_list entries must be <= {limit} for a network of {net.node_count} nodes")
    logger.info("built %s network: %d nodes, %d links", net.name, net.node_count, net.edge_count)
    return net


@lru_cache(maxsize=4)
def prepare(config: ScenarioConfig, network_seed) -> RoutingTables:
    """Network and routing tables for one network seed, cached per process."""
    net = build_network_from_config(config, network_seed)
    return build_bypass_tables(net, config.beta_set, weighting=config.bypass_weighting)


def format_csv(frame: pd.DataFrame, config: ScenarioConfig, seeds) -> str:
    """CSV text preceded by a '#' header with the config hash and seeds."""
    seed_text = ",".join(str(s) for s in seeds)
    buffer = io.StringIO()
    buffer.write(f"# config_hash={config.config_hash} seeds={seed_text}\n")
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def write_csv(frame: pd.DataFrame, path, config: ScenarioConfig, seeds) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_csv(frame, config, seeds))
    logger.info("wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def _map_cells(config: ScenarioConfig, job, cells, done=None) -> list:
    """
    Run job(config, cell) for every cell, in parallel when workers > 1.

    Results are appended to done in cell order as they become available, so
    a caller can flush the completed prefix if a later cell fails.
    """
    done = [] if done is None else done
    if config.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for result in pool.map(job, [config] * len(cells), cells):
                done.append(result)
    else:
        for cell in cells:
            done.append(job(config, cell))
    return done


def _simulator(config: ScenarioConfig, cell: Cell):
    """Simulator, fresh agents (HD with K > 0 only) and a spare random stream for one cell."""
    tables = prepare(config, cell.network_seed)
    rate = cell.r_over_n * tables.network.node_count
    sim_stream, agent_stream, aux_stream = cell.seed_sequence().spawn(3)
    sim_config = config.sim_config(rate, cell.strategy, cell.seed)
    rng = np.random.default_rng(sim_stream)

    if cell.strategy != "HD" or cell.K == 0:
        return Simulator(tables, sim_config, rng=rng), [], aux_stream

    rl_set = select_rl_nodes(tables.network, cell.K)
    sim = Simulator(tables, sim_config, rl_set, rng=rng)
    agents = create_agents(rl_set.nodes, len(tables.beta_set), config.agent_config(), agent_stream)
    return sim, agents, aux_stream


def _train(config: ScenarioConfig, sim, agents, on_episode_end=None):
    log = episode_loop(sim, agents, config.episodes, on_episode_end=on_episode_end)
    sim.reset_traffic()
    return log


def _capacity_cell(config: ScenarioConfig, cell: Cell) -> dict:
    sim, agents, _ = _simulator(config, cell)
    steps = config.warmup + config.window
    if agents:
        _train(config, sim, agents)
        run_policy(sim, agents, steps)
    else:
        sim.run(steps)

    eta = order_parameter(sim, sim.config.rate, config.warmup, config.window)
    logger.debug("%s: eta=%.4f", cell.label, eta)
    return {
        "strategy": cell.strategy,
        "K": cell.K,
        "R_over_N": cell.r_over_n,
        "R": sim.config.rate,
        "seed": cell.seed,
        "network_seed": cell.network_seed,
        "eta": eta,
    }


def capacity_cells(config: ScenarioConfig) -> list:
    cells = []
    for network_seed in config.network_seeds:
        for strategy in config.strategies:
            k_values = config.k_list if strategy == "HD" else (0,)
            for K in k_values:
                for r in config.r_over_n:
                    for seed in config.seeds:
                        cells.append(Cell(strategy, K, r, seed, network_seed))
    return cells


def capacity_table(rows: pd.DataFrame, threshold) -> pd.DataFrame:
    """
    R_c per (strategy, K, network seed) from seed-averaged eta, with the
    relative gain over SP on the same network.
    """
    records = []
    grouped = rows.groupby(["strategy", "K", "network_seed"], sort=False)
    for (strategy, K, network_seed), group in grouped:
        curve = group.groupby("R", sort=True)["eta"].mean()
        try:
            rc = estimate_rc(zip(curve.index, curve.values), threshold=threshold)
        except ValueError as e:
            logger.warning("R_c not estimable for %s K=%d network %d: %s", strategy, K, network_seed, e)
            rc = float("nan")
        records.append({"strategy": strategy, "K": int(K), "network_seed": int(network_seed), "R_c": rc})

    table = pd.DataFrame(records, columns=["strategy", "K", "network_seed", "R_c"])
    sp = table[table["strategy"] == "SP"].set_index("network_seed")["R_c"]
    baseline = table["network_seed"].map(sp)
    table["delta_rc"] = (table["R_c"] - baseline) / baseline
    return table


def run_capacity_sweep(config: ScenarioConfig) -> SweepResult:
    """
    Measure eta over the (strategy, K, R/N, seed, network) grid and estimate R_c.

    HD cells train their own agents from scratch, then measure eta with the
    policy at its epsilon floor and learning paused.

    Emits sweep.csv, rc.csv and rc_summary.csv under config.out_dir.
    """
    out_dir = Path(config.out_dir)
    seeds = list(config.seeds)
    cells = capacity_cells(config)
    logger.info("capacity sweep: %d cells", len(cells))

    rows = []
    try:
        _map_cells(config, _capacity_cell, cells, rows)
    except Exception:
        if rows:
            write_csv(pd.DataFrame(rows), out_dir / "sweep.partial.csv", config, seeds)
        raise

    frame = pd.DataFrame(rows, columns=["strategy", "K", "R_over_N", "R", "seed", "network_seed", "eta"])
    write_csv(frame, out_dir / "sweep.csv", config, seeds)

    capacities = capacity_table(frame, config.rc_threshold)
    write_csv(capacities, out_dir / "rc.csv", config, seeds)

    summary = (
        capacities.groupby(["strategy", "K"], sort=False)
        .agg(R_c_mean=("R_c", "mean"), R_c_std=("R_c", "std"), delta_rc_mean=("delta_rc", "mean"), networks=("R_c", "count"))
        .reset_index()
    )
    write_csv(summary, out_dir / "rc_summary.csv", config, seeds)
    return SweepResult(rows=frame, capacities=capacities, summary=summary)


def _census_cell(config: ScenarioConfig, cell: Cell) -> np.ndarray:
    sim, agents, _ = _simulator(config, cell)
    log = _train(config, sim, agents)
    return action_distribution(log, min(config.census_last, config.episodes))


def run_action_census(config: ScenarioConfig) -> pd.DataFrame:
    """
    Per-agent P(beta) over the last census_last training episodes at each R/N.

    Uses the first entry of k_list on every network seed. Agents are matched
    across networks by BC rank; node is the agent's id on the first network.
    freq is the mean over network seeds and seeds, freq_std its spread.
    Emits actions.csv and, for K >= 2, coherence.csv with the base-2
    Jensen-Shannon divergence between the averaged top two agents.
    """
    K = config.k_list[0]
    if K < 1:
        raise ConfigError("the action census needs k_list[0] >= 1")
    rl_nodes = select_rl_nodes(prepare(config, config.network_seeds[0]).network, K).nodes

    cells = [
        Cell("HD", K, r, seed, network_seed)
        for r in config.r_over_n
        for network_seed in config.network_seeds
        for seed in config.seeds
    ]
    results = _map_cells(config, _census_cell, cells)

    rows, coherence = [], []
    per_rate = len(config.network_seeds) * len(config.seeds)
    for i, r in enumerate(config.r_over_n):
        runs = np.array(results[i * per_rate: (i + 1) * per_rate])
        dist, spread = runs.mean(axis=0), runs.std(axis=0)
        for k, node in enumerate(rl_nodes):
            for b, beta in enumerate(config.beta_set):
                rows.append({"rank": k + 1, "node": node, "R_over_N": r, "beta": beta,
                             "freq": dist[k, b], "freq_std": spread[k, b]})
        if K >= 2:
            js = float(jensenshannon(dist[0], dist[1], base=2) ** 2)
            coherence.append({"R_over_N": r, "node_a": rl_nodes[0], "node_b": rl_nodes[1], "js": js})

    frame = pd.DataFrame(rows, columns=["rank", "node", "R_over_N", "beta", "freq", "freq_std"])
    write_csv(frame, Path(config.out_dir) / "actions.csv", config, config.seeds)
    if coherence:
        write_csv(pd.DataFrame(coherence), Path(config.out_dir) / "coherence.csv", config, config.seeds)
    return frame


def _resilience_cell(config: ScenarioConfig, job) -> tuple:
    mode, cell = job
    sim, agents, aux_stream = _simulator(config, cell)
    removal_rng = np.random.default_rng(aux_stream)
    at = config.removal_at_episode

    def damage(episode, simulator):
        # episode is 0-based; removal follows the at-th episode
        if mode != NO_REMOVAL and episode == at - 1:
            remove_links(simulator, config.removal_fraction, mode, removal_rng)

    log = _train(config, sim, agents, on_episode_end=damage)
    window = min(config.census_last, at, config.episodes - at)
    pre = action_distribution(log, window, until=at)[0]
    post = action_distribution(log, window)[0]
    return log.rewards.mean(axis=1), pre, post


def run_resilience(config: ScenarioConfig) -> pd.DataFrame:
    """
    Train HD agents, remove links after episode removal_at_episode, keep training.

    Runs every removal mode (and a no-removal control) at the first R/N and K
    on every network seed. Emits resilience.csv with the reward per episode
    (1-based) averaged over network seeds and seeds, its spread and its
    3-episode moving average, and resilience_actions.csv with the top agent's
    P(beta) before and after.
    """
    at = config.removal_at_episode
    if not 0 < at < config.episodes:
        raise ConfigError(f"removal_at_episode must be in [1, {config.episodes - 1}], got {at}")
    K = config.k_list[0]
    if K < 1:
        raise ConfigError("resilience runs need k_list[0] >= 1")

    modes = list(config.removal_modes) + ([NO_REMOVAL] if config.removal_control else [])
    r = config.r_over_n[0]
    jobs = [
        (mode, Cell("HD", K, r, seed, network_seed))
        for mode in modes
        for network_seed in config.network_seeds
        for seed in config.seeds
    ]
    results = _map_cells(config, _resilience_cell, jobs)

    reward_rows, action_rows = [], []
    per_mode = len(config.network_seeds) * len(config.seeds)
    for i, mode in enumerate(modes):
        chunk = results[i * per_mode: (i + 1) * per_mode]
        runs = np.array([c[0] for c in chunk])
        rewards = pd.Series(runs.mean(axis=0))
        spread = runs.std(axis=0)
        smoothed = rewards.rolling(3, min_periods=1).mean()
        for e in range(config.episodes):
            reward_rows.append({"mode": mode, "episode": e + 1, "reward": rewards[e],
                                "reward_std": spread[e], "reward_ma3": smoothed[e]})
        for phase, j in (("pre", 1), ("post", 2)):
            dists = np.array([c[j] for c in chunk])
            dist, dist_std = dists.mean(axis=0), dists.std(axis=0)
            for b, beta in enumerate(config.beta_set):
                action_rows.append({"mode": mode, "phase": phase, "beta": beta,
                                    "freq": dist[b], "freq_std": dist_std[b]})

    frame = pd.DataFrame(reward_rows, columns=["mode", "episode", "reward", "reward_std", "reward_ma3"])
    write_csv(frame, Path(config.out_dir) / "resilience.csv", config, config.seeds)
    write_csv(
        pd.DataFrame(action_rows, columns=["mode", "phase", "beta", "freq", "freq_std"]),
        Path(config.out_dir) / "resilience_actions.csv",
        config,
        config.seeds,
    )
    return frame


def _report_cell(config: ScenarioConfig, cell: Cell) -> tuple:
    sim, agents, _ = _simulator(config, cell)
    if agents:
        _train(config, sim, agents)
        run_policy(sim, agents, config.report_steps)
    else:
        sim.run(config.report_steps)

    counters = sim.counters
    drops = sim.drop_snapshot if sim.drop_snapshot is not None else counters.drop_by_node
    return (
        traveltime_frame(counters, cell.strategy, sim.config.rate),
        timeseries_frame(counters),
        loss_by_bc_frame(sim.network.bc, drops, bins=config.bc_bins),
    )


def run_distribution_report(config: ScenarioConfig) -> pd.DataFrame:
    """
    Travel-time distributions and drop-vs-BC profiles per strategy.

    HD uses K = report_k. Each (strategy, R/N, seed) run on the first network
    seed writes timeseries.csv and loss_by_bc.csv (drops at snapshot_time)
    into its own subdirectory; all travel-time histograms go to traveltime.csv.
    """
    network_seed = config.network_seeds[0]
    cells = [
        Cell(strategy, config.report_k if strategy == "HD" else 0, r, seed, network_seed)
        for strategy in config.strategies
        for r in config.r_over_n
        for seed in config.seeds
    ]
    results = _map_cells(config, _report_cell, cells)

    out_dir = Path(config.out_dir)
    histograms = []
    for cell, (hist, series, losses) in zip(cells, results):
        hist = hist.assign(seed=cell.seed)
        histograms.append(hist)
        write_csv(series, out_dir / "runs" / cell.label / "timeseries.csv", config, [cell.seed])
        write_csv(losses, out_dir / "runs" / cell.label / "loss_by_bc.csv", config, [cell.seed])

    frame = pd.concat(histograms, ignore_index=True)
    frame = frame[["strategy", "R", "seed", "T", "count"]]
    write_csv(frame, out_dir / "traveltime.csv", config, config.seeds)
    return frame


def run_training(config: ScenarioConfig) -> pd.DataFrame:
    """
    Train HD agents for one cell (first R/N, K, seed and network seed).

    Emits rewards.csv, actions_log.csv and one checkpoint per agent.
    """
    cell = Cell("HD", config.k_list[0], config.r_over_n[0], config.seeds[0], config.network_seeds[0])
    if cell.K < 1:
        raise ConfigError("training needs k_list[0] >= 1")
    sim, agents, _ = _simulator(config, cell)
    log = episode_loop(sim, agents, config.episodes)

    out_dir = Path(config.out_dir)
    rewards = log.rewards_frame()
    write_csv(rewards, out_dir / "rewards.csv", config, [cell.seed])
    write_csv(log.actions_frame(), out_dir / "actions_log.csv", config, [cell.seed])
    checkpoints = out_dir / "checkpoints"
    checkpoints.mkdir(parents=True, exist_ok=True)
    for agent in agents:
        save_checkpoint(agent.qnet, checkpoints / f"node_{agent.node}.json")
    return rewards


def run_stats(config: ScenarioConfig) -> pd.DataFrame:
    """
    Degree statistics row (name, N, mean degree, <l>, RSD, H) averaged over network seeds.

    stats.csv holds exactly that row. BA networks also get tail.csv with the
    maximum-likelihood tail exponent of every network seed.
    """
    rows, tails = [], []
    for network_seed in config.network_seeds:
        net = build_network_from_config(config, network_seed)
        rows.append(table_row(net, degree_stats(net)))
        if config.network == "ba":
            kmin = 2 * config.m
            # discrete MLE is biased low near the minimum degree
            tails.append({"name": net.name, "network_seed": network_seed, "kmin": kmin,
                          "gamma_ml": round(powerlaw_exponent(net.degrees, kmin), 4)})

    per_seed = pd.DataFrame(rows)
    row = {"name": per_seed["name"].iloc[0], "N": int(round(per_seed["N"].mean()))}
    for column in STATS_COLUMNS[2:]:
        row[column] = round(float(per_seed[column].mean()), 4)
    frame = pd.DataFrame([row], columns=list(STATS_COLUMNS))
    write_csv(frame, Path(config.out_dir) / "stats.csv", config, config.network_seeds)
    if tails:
        write_csv(pd.DataFrame(tails), Path(config.out_dir) / "tail.csv", config, config.network_seeds)
    return frame


def run_degeneracy(config: ScenarioConfig) -> pd.DataFrame:
    """Mean BC along each beta-bypass of the top k_list[0] nodes over bc_samples pairs."""
    network_seed = config.network_seeds[0]
    tables = prepare(config, network_seed)
    rl_set = select_rl_nodes(tables.network, config.k_list[0])
    rng = np.random.default_rng(np.random.SeedSequence([config.seeds[0], network_seed]))
    frame = bypass_degeneracy(tables, rl_set, config.bc_samples, rng).to_frame()
    write_csv(frame, Path(config.out_dir) / "degeneracy.csv", config, [config.seeds[0]])
    return frame
