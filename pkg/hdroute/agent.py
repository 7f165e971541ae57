# Per-RL-node deep Q-learning agents
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from hdroute.traffic import MiStats, Simulator

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hdroute-qnet"
CHECKPOINT_VERSION = 1

SUPPORTED_OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class AgentConfig:
    """DQN hyperparameters shared by all agents of a run."""

    hidden: tuple = (64, 64)
    gamma: float = 0.9
    lr: float = 1e-3
    replay_capacity: int = 10_000
    batch: int = 32
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 20
    target_sync: int = 50
    train_start: int = 10
    optimizer: str = "sgd"
    peer_queues: bool = False
    travel_weight: float = 1.0
    drop_weight: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ValueError("epsilon values must be in [0, 1]")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end cannot exceed eps_start")
        if self.lr <= 0:
            raise ValueError("lr must be greater than 0")
        if self.batch < 1 or self.replay_capacity < 1 or self.target_sync < 1:
            raise ValueError("batch, replay_capacity and target_sync must be at least 1")
        if self.optimizer not in SUPPORTED_OPTIMIZERS:
            raise ValueError(f"unsupported optimizer: {self.optimizer}")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be positive")


class QNetwork:
    """
    Fully connected network with rectifier hidden layers and a linear output.

    weights[i] has shape (fan_in, fan_out); inputs are row vectors.
    """

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be non-empty lists of equal length")
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]

    @classmethod
    def initialize(cls, input_size, hidden, output_size, rng):
        """He-initialized weights, zero biases."""
        sizes = [input_size, *hidden, output_size]
        weights = [
            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
        ]
        biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        return cls(weights, biases)

    @property
    def sizes(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _layers(self, states):
        activations = [states]
        pre_activations = []
        a = states
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre_activations.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            activations.append(a)
        return activations, pre_activations

    def forward(self, states) -> np.ndarray:
        """
        Q-values for one state (1-D) or a batch of states (2-D).

        Raises:
            ValueError: If the state dimension does not match the input layer
        """
        states = np.asarray(states, dtype=float)
        single = states.ndim == 1
        batch = states[None, :] if single else states
        if batch.ndim != 2 or batch.shape[1] != self.sizes[0]:
            raise ValueError(f"state dimension {states.shape} does not match input size {self.sizes[0]}")
        q = self._layers(batch)[0][-1]
        return q[0] if single else q

    def gradients(self, states, actions, targets):
        """
        Mean squared TD error of the taken actions and its gradients.

        Returns:
            tuple: (loss, grads) with grads aligned to self.parameters
        """
        states = np.asarray(states, dtype=float)
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=float)
        rows = np.arange(len(actions))

        activations, pre_activations = self._layers(states)
        error = activations[-1][rows, actions] - targets
        loss = float(np.mean(error**2))

        delta = np.zeros_like(activations[-1])
        delta[rows, actions] = 2.0 * error / len(actions)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(activations[i].T @ delta)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre_activations[i - 1] > 0)
        # appended as b_L, W_L, ..., b_0, W_0
        grads.reverse()
        return loss, grads


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g**2
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class ReplayBuffer:
    """Ring buffer of (state, action, reward, next_state) with uniform sampling."""

    def __init__(self, capacity, state_size):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_size))
        self.position = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state):
        i = self.position
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.position = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        idx = rng.integers(self.size, size=batch)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


def epsilon_at(config: AgentConfig, episode) -> float:
    """Linear decay from eps_start to eps_end over eps_decay_episodes, then flat."""
    if config.eps_decay_episodes <= 0:
        return config.eps_end
    frac = min(1.0, episode / config.eps_decay_episodes)
    return config.eps_start + (config.eps_end - config.eps_start) * frac


class Agent:
    """Q-network, target network, replay buffer and optimizer of one RL node."""

    def __init__(self, node, state_size, n_actions, config: AgentConfig, rng):
        self.node = node
        self.config = config
        self.n_actions = n_actions
        self.rng = rng
        self.qnet = QNetwork.initialize(state_size, config.hidden, n_actions, rng)
        self.target = self.qnet.copy()
        self.replay = ReplayBuffer(config.replay_capacity, state_size)
        self.optimizer = Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)
        self.epsilon = config.eps_start
        self.updates = 0

    def act(self, state, rng=None) -> int:
        """Epsilon-greedy action; greedy ties go to the lowest index."""
        rng = rng if rng is not None else self.rng
        if rng.random() < self.epsilon:
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.qnet.forward(state)))

    def remember(self, state, action, reward, next_state):
        self.replay.add(state, action, reward, next_state)

    def train_step(self):
        """
        One gradient step on a uniform replay batch.

        Returns:
            float | None: Batch loss, or None while the buffer holds fewer than
            train_start experiences
        """
        if len(self.replay) < self.config.train_start:
            return None

        states, actions, rewards, next_states = self.replay.sample(self.config.batch, self.rng)
        targets = rewards + self.config.gamma * self.target.forward(next_states).max(axis=1)
        loss, grads = self.qnet.gradients(states, actions, targets)
        self.optimizer.step(self.qnet.parameters, grads)

        self.updates += 1
        if self.updates % self.config.target_sync == 0:
            self.target = self.qnet.copy()
        return loss


def create_agents(rl_nodes, n_actions, config: AgentConfig, seed) -> list:
    """One agent per RL node, each with its own RNG stream spawned from seed (int or SeedSequence)."""
    state_size = len(rl_nodes) if config.peer_queues else 1
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(len(rl_nodes))
    return [
        Agent(node, state_size, n_actions, config, np.random.default_rng(stream))
        for node, stream in zip(rl_nodes, streams)
    ]


def observe(sim: Simulator, k, peer_queues) -> np.ndarray:
    """State of the k-th RL node: its queue fraction, then the other RL nodes' if enabled."""
    nodes = sim.rl_set.nodes
    own = [sim.queue_fraction(nodes[k])]
    if not peer_queues:
        return np.array(own)
    return np.array(own + [sim.queue_fraction(v) for i, v in enumerate(nodes) if i != k])


def reward(stats: MiStats, config: AgentConfig) -> float:
    return -config.travel_weight * stats.travel_time - config.drop_weight * stats.drop_rate


@dataclass
class TrainingLog:
    """
    Per-episode training record.

    rewards[e, k] is agent k's reward averaged over the MIs of episode e;
    action_counts[e, k, i] counts MIs in which agent k chose beta_set[i].
    """

    nodes: tuple
    beta_set: tuple
    rewards: np.ndarray
    action_counts: np.ndarray
    redirect_frequency: np.ndarray
    losses: list = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.rewards)

    def rewards_frame(self) -> pd.DataFrame:
        rows = [
            {"episode": e, "node": node, "reward": self.rewards[e, k], "redirect_frequency": self.redirect_frequency[e]}
            for e in range(self.episodes)
            for k, node in enumerate(self.nodes)
        ]
        return pd.DataFrame(rows, columns=["episode", "node", "reward", "redirect_frequency"])

    def actions_frame(self) -> pd.DataFrame:
        rows = [
            {"episode": e, "node": node, "beta": beta, "count": int(self.action_counts[e, k, i])}
            for e in range(self.episodes)
            for k, node in enumerate(self.nodes)
            for i, beta in enumerate(self.beta_set)
        ]
        return pd.DataFrame(rows, columns=["episode", "node", "beta", "count"])


def episode_loop(sim: Simulator, agents, episodes, *, on_episode_end=None) -> TrainingLog:
    """
    Train the agents for a number of episodes.

    Every episode restarts the traffic (weights and replay persist) and runs
    mis_per_episode monitor intervals. At each MI start every agent observes
    its state and picks a beta; after the MI it is rewarded for the packets it
    directed, stores the experience and takes one training step.

    Args:
        sim: HD simulator whose RL nodes match agents
        agents: Agents in RL-node order
        episodes: Number of episodes to run
        on_episode_end: Optional callback(episode_index, sim), called after
            the episode is logged

    Returns:
        TrainingLog: Rewards, action counts and redirect frequency per episode
    """
    _check_agents(sim, agents)

    n_actions = len(sim.tables.beta_set)
    mis = sim.config.mis_per_episode
    rewards = np.zeros((episodes, len(agents)))
    counts = np.zeros((episodes, len(agents), n_actions), dtype=np.int64)
    redirects = np.zeros(episodes)
    losses = []

    for episode in range(episodes):
        sim.reset_traffic()
        for agent in agents:
            agent.epsilon = epsilon_at(agent.config, episode)

        states = [observe(sim, k, agent.config.peer_queues) for k, agent in enumerate(agents)]
        for _ in range(mis):
            actions = [agent.act(states[k]) for k, agent in enumerate(agents)]
            sim.set_actions(actions)
            mi_stats = sim.run_mi()

            next_states = [observe(sim, k, agent.config.peer_queues) for k, agent in enumerate(agents)]
            for k, agent in enumerate(agents):
                r = reward(mi_stats[agent.node], agent.config)
                rewards[episode, k] += r
                counts[episode, k, actions[k]] += 1
                agent.remember(states[k], actions[k], r, next_states[k])
                loss = agent.train_step()
                if loss is not None:
                    losses.append(loss)
            states = next_states

        rewards[episode] /= mis
        decisions = sim.counters.bypass_decisions
        redirects[episode] = sim.counters.redirects_to_rl / decisions if decisions else 0.0
        if agents:
            logger.info("episode %d: mean reward %.4f over %d agents", episode, rewards[episode].mean(), len(agents))
        if on_episode_end is not None:
            on_episode_end(episode, sim)

    return TrainingLog(
        nodes=tuple(a.node for a in agents),
        beta_set=sim.tables.beta_set,
        rewards=rewards,
        action_counts=counts,
        redirect_frequency=redirects,
        losses=losses,
    )


def run_policy(sim: Simulator, agents, steps) -> None:
    """
    Continue the traffic for at least steps steps with learning paused.

    Agents act at their epsilon floor and refresh their action every MI; the
    traffic is not reset.
    """
    _check_agents(sim, agents)
    for agent in agents:
        agent.epsilon = agent.config.eps_end

    for _ in range(-(-steps // sim.config.mi_len)):
        states = [observe(sim, k, agent.config.peer_queues) for k, agent in enumerate(agents)]
        sim.set_actions([agent.act(states[k]) for k, agent in enumerate(agents)])
        sim.run_mi()


def _check_agents(sim: Simulator, agents):
    if sim.config.strategy != "HD":
        raise ValueError("agents can only drive an HD simulator")
    if [a.node for a in agents] != list(sim.rl_set.nodes):
        raise ValueError("agents must match the simulator's RL nodes in order")


def action_distribution(log: TrainingLog, last_n, until=None) -> np.ndarray:
    """
    Normalized action frequencies P(beta) per agent over a window of episodes.

    Args:
        log: Training log
        last_n: Number of episodes in the window
        until: Exclusive end episode of the window (default: end of log)

    Returns:
        np.ndarray: (K, len(beta_set)) rows summing to 1

    Raises:
        ValueError: If the log has fewer than last_n episodes before until
    """
    end = log.episodes if until is None else until
    if last_n < 1 or end - last_n < 0 or end > log.episodes:
        raise ValueError(f"log covers {log.episodes} episodes, cannot take {last_n} ending at {end}")
    totals = log.action_counts[end - last_n: end].sum(axis=0).astype(float)
    sums = totals.sum(axis=1, keepdims=True)
    return np.divide(totals, sums, out=np.zeros_like(totals), where=sums > 0)


def save_checkpoint(qnet: QNetwork, path) -> None:
    """Write layer sizes and row-major parameter values as a versioned JSON document."""
    values = []
    for w, b in zip(qnet.weights, qnet.biases):
        values.extend(w.ravel(order="C").tolist())
        values.extend(b.tolist())
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": qnet.sizes,
        "values": values,
    }
    Path(path).write_text(json.dumps(document), encoding="utf-8")


def load_checkpoint(path) -> QNetwork:
    """
    Restore a QNetwork written by save_checkpoint.

    Raises:
        ValueError: On an unknown format, version or size mismatch
    """
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if document.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {document.get('version')}")

    sizes = document["layers"]
    values = np.array(document["values"], dtype=float)
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(values) != expected:
        raise ValueError(f"{path}: expected {expected} values for layers {sizes}, got {len(values)}")

    weights, biases, offset = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(values[offset: offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        biases.append(values[offset: offset + fan_out])
        offset += fan_out
    return QNetwork(weights, biases)
