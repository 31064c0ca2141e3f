"""Deep Q-network controller for the pooled (centralized) energy buffer."""

import itertools

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..env import CENTRALIZED
from ..neural import FeedforwardNetwork, apply_update, make_optimizer, soft_update
from .base import BaseController
from .buffer import ReplayBuffer, Transition


class CatalogTooLargeError(ValueError):
    """The joint action catalog would exceed the configured node cap."""


def build_action_catalog(n_nodes, levels):
    """All joint allocations with one entry of ``levels`` per node.

    Rows are ordered lexicographically, so index 0 is the all-zero action.
    """
    levels = sorted(float(v) for v in levels)
    if not levels:
        raise ValueError("the action catalog needs at least one level")
    return np.array(list(itertools.product(levels, repeat=n_nodes)), dtype=float).reshape(
        -1, n_nodes)


class DqnAgent(BaseController):
    """Q-network over an enumerated catalog of per-node energy draws.

    The network outputs one discounted cost-to-go estimate per catalog entry;
    the greedy action is the feasible entry with the smallest estimate.

    Parameters
    ----------
    levels : tuple of float, default=(0, 1, 3, 7, 15)
        Energy a node may draw from the pool in one slot. The defaults are the
        cheapest integer amounts that carry 0, 1, 2, 3 and 4 packets.
    max_nodes : int, default=6
        Networks larger than this are refused (the catalog has
        ``len(levels) ** n_nodes`` entries).
    hidden_sizes : tuple of int, default=(16, 16)
    hidden_activation : str, default='tanh'
    gamma : float, default=0.9
    learning_rate : float, default=1e-3
    optimizer : {'adam', 'sgd'}, default='adam'
    tau : float, default=0.005
        Soft target refresh per train step; 1.0 gives a hard copy every
        ``target_interval`` steps.
    target_interval : int, default=1
    epsilon, epsilon_decay, epsilon_min : float, default=1.0, 0.995, 0.05
        Per-episode exploration schedule.
    batch_size, buffer_capacity : int, default=64, 100_000
    cost_scale : float or None, default=None
    n_episodes, episode_length : int, default=2000, 200
    random_state : int, Generator or None
    """

    mode = CENTRALIZED

    def __init__(self, levels=(0, 1, 3, 7, 15), max_nodes=6, hidden_sizes=(16, 16),
                 hidden_activation="tanh", gamma=0.9, learning_rate=1e-3, optimizer="adam",
                 tau=0.005, target_interval=1, epsilon=1.0, epsilon_decay=0.995,
                 epsilon_min=0.05, batch_size=64, buffer_capacity=100_000, cost_scale=None,
                 n_episodes=2000, episode_length=200, random_state=None):
        self.levels = levels
        self.max_nodes = max_nodes
        self.hidden_sizes = hidden_sizes
        self.hidden_activation = hidden_activation
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.tau = tau
        self.target_interval = target_interval
        self.epsilon = epsilon
        self.epsilon_decay = epsilon_decay
        self.epsilon_min = epsilon_min
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.cost_scale = cost_scale
        self.n_episodes = n_episodes
        self.episode_length = episode_length
        self.random_state = random_state

    def _initialize(self, config, rng):
        n = config.n_nodes
        if n > self.max_nodes:
            raise CatalogTooLargeError(
                f"DQN catalog needs {len(self.levels)}**{n} outputs; capped at {self.max_nodes} nodes"
            )
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.catalog_ = build_action_catalog(n, self.levels)
        self.catalog_totals_ = self.catalog_.sum(axis=1)
        self.qnet_ = FeedforwardNetwork.build([n + 1, *self.hidden_sizes, len(self.catalog_)],
                                              self.hidden_activation, "identity", rng)
        self.target_qnet_ = self.qnet_.copy()
        self.optimizer_ = make_optimizer(self.optimizer, self.learning_rate)
        self.buffer_ = ReplayBuffer(self.buffer_capacity)
        self.epsilon_ = float(self.epsilon)
        self.state_scale_ = np.concatenate([np.full(n, 1.0 / config.d_max),
                                            [1.0 / config.energy_capacity]])
        self.cost_scale_ = (1.0 / (n * config.d_max ** 2) if self.cost_scale is None
                            else float(self.cost_scale))
        self.n_updates_ = 0

    def _feasible(self, pool):
        # pool has shape (batch,) ; result (batch, n_actions)
        return self.catalog_totals_[None, :] <= np.asarray(pool, dtype=float)[:, None] + 1e-12

    def q_values(self, state):
        """Cost-to-go estimates for every catalog entry, infeasible ones at +inf."""
        check_is_fitted(self, "qnet_")
        q = self.qnet_.forward(state.as_vector() * self.state_scale_)
        return np.where(self._feasible([state.energies[0]])[0], q, np.inf)

    def select_action(self, state, rng=None, epsilon=None):
        """Epsilon-greedy catalog index; greedy ties go to the lowest index."""
        check_is_fitted(self, "qnet_")
        eps = self.epsilon_ if epsilon is None else epsilon
        if eps > 0 and rng.random() < eps:
            feasible = np.flatnonzero(self._feasible([state.energies[0]])[0])
            return int(feasible[rng.integers(len(feasible))])
        return int(np.argmin(self.q_values(state)))

    def allocation(self, index):
        return np.diag(self.catalog_[index])

    def act(self, state):
        return self.allocation(self.select_action(state, epsilon=0.0))

    def _explore(self, state, rng):
        index = self.select_action(state, rng)
        return index, self.allocation(index)

    def _observe(self, state, index, cost, next_state):
        self.buffer_.push(Transition(state.as_vector(), np.array([index], dtype=float), cost,
                                     next_state.as_vector()))

    def _learn(self, rng):
        if len(self.buffer_) < self.batch_size:
            return None
        return self.train_step(rng), np.nan

    def train_step(self, rng):
        """One squared-Bellman-error step; returns the minibatch loss."""
        batch = self.buffer_.sample(self.batch_size, rng)
        s = batch.state * self.state_scale_
        s_next = batch.next_state * self.state_scale_
        taken = batch.action[:, 0].astype(np.int64)
        k = len(taken)

        q_next = self.target_qnet_.forward(s_next)
        q_next = np.where(self._feasible(batch.next_state[:, -1]), q_next, np.inf)
        target = batch.cost * self.cost_scale_ + self.gamma * q_next.min(axis=1)

        q, cache = self.qnet_.forward_cache(s)
        rows = np.arange(k)
        err = q[rows, taken] - target
        upstream = np.zeros_like(q)
        upstream[rows, taken] = (2.0 / k) * err
        grads, _ = self.qnet_.backward_cached(cache, upstream, need_input_grad=False)
        apply_update(self.qnet_, grads, self.optimizer_)

        self.n_updates_ += 1
        if self.n_updates_ % self.target_interval == 0:
            soft_update(self.target_qnet_, self.qnet_, self.tau)
        return float(np.mean(err * err))

    def _end_episode(self, log):
        self.epsilon_ = max(self.epsilon_min, self.epsilon_ * self.epsilon_decay)

    def _exploration_level(self):
        return self.epsilon_

    def _parameters_finite(self):
        return self.qnet_.is_finite()

    def networks(self):
        check_is_fitted(self, "qnet_")
        return {"qnet": self.qnet_, "target_qnet": self.target_qnet_}
