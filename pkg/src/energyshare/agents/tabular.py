"""Independent per-node tabular Q-learning without energy sharing."""

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..env import NO_SHARING
from .base import BaseController


def discretize(energy, bin_width=1.0, e_max=None):
    """Energy bin ``floor(energy / bin_width)``, capped at the top bin of ``e_max``."""
    energy = np.asarray(energy, dtype=float)
    if np.any(energy < 0):
        raise ValueError("energy must be non-negative")
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    bins = np.floor(energy / bin_width).astype(np.int64)
    if e_max is not None:
        bins = np.minimum(bins, int(np.floor(e_max / bin_width)))
    return int(bins) if bins.ndim == 0 else bins


class TabularQAgent(BaseController):
    """One Q-table per node over (queue length, energy bin, transmit level).

    Level ``l`` spends ``l * bin_width`` energy on the node's own queue, so
    only levels up to the current energy bin are feasible. Each node learns
    from its own squared post-transmission queue as cost.

    Parameters
    ----------
    bin_width : float, default=1.0
    gamma : float, default=0.9
    learning_rate : float or 'visit', default='visit'
        A constant step, or ``1 / n(s, a) ** lr_exponent`` where ``n`` counts
        visits of the state-action pair.
    lr_exponent : float, default=0.6
        Exponent of the visit-count schedule; 1.0 is the plain harmonic step.
    epsilon, epsilon_decay, epsilon_min : float, default=1.0, 0.995, 0.05
    n_episodes, episode_length : int, default=2000, 200
    random_state : int, Generator or None
    """

    mode = NO_SHARING

    def __init__(self, bin_width=1.0, gamma=0.9, learning_rate="visit", lr_exponent=0.6,
                 epsilon=1.0, epsilon_decay=0.995, epsilon_min=0.05, n_episodes=2000,
                 episode_length=200, random_state=None):
        self.bin_width = bin_width
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.lr_exponent = lr_exponent
        self.epsilon = epsilon
        self.epsilon_decay = epsilon_decay
        self.epsilon_min = epsilon_min
        self.n_episodes = n_episodes
        self.episode_length = episode_length
        self.random_state = random_state

    def _initialize(self, config, rng):
        if self.learning_rate != "visit" and not 0.0 <= float(self.learning_rate) <= 1.0:
            raise ValueError("learning_rate must be 'visit' or a number in [0, 1]")
        n_bins = int(np.floor(config.e_max / self.bin_width)) + 1
        shape = (config.n_nodes, config.d_max + 1, n_bins, n_bins)
        self.e_max_ = config.e_max
        self.q_table_ = np.zeros(shape)
        self.visits_ = np.zeros(shape, dtype=np.int64)
        levels = np.arange(n_bins)
        # feasible_[e_bin, level] is True when level <= e_bin
        self.feasible_ = levels[None, :] <= levels[:, None]
        self.epsilon_ = float(self.epsilon)
        self._pending = None

    @property
    def n_levels_(self):
        return self.q_table_.shape[-1]

    def _bins(self, energies):
        return discretize(energies, self.bin_width, self.e_max_)

    def select_level(self, node, q, e_bin, rng=None, epsilon=None):
        """Epsilon-greedy transmit level for one node; ties go to the lowest level."""
        check_is_fitted(self, "q_table_")
        eps = self.epsilon_ if epsilon is None else epsilon
        if eps > 0 and rng.random() < eps:
            return int(rng.integers(e_bin + 1))
        values = np.where(self.feasible_[e_bin], self.q_table_[node, q, e_bin], np.inf)
        return int(np.argmin(values))

    def update(self, node, q, e_bin, level, cost, next_q, next_e_bin):
        """Q-learning backup for one node's transition."""
        check_is_fitted(self, "q_table_")
        nxt = np.where(self.feasible_[next_e_bin], self.q_table_[node, next_q, next_e_bin], np.inf)
        self.visits_[node, q, e_bin, level] += 1
        beta = self._rate(self.visits_[node, q, e_bin, level])
        old = self.q_table_[node, q, e_bin, level]
        self.q_table_[node, q, e_bin, level] = (1.0 - beta) * old + beta * (cost + self.gamma * nxt.min())

    def _rate(self, visits):
        if self.learning_rate == "visit":
            return 1.0 / np.power(visits, self.lr_exponent)
        return float(self.learning_rate)

    def _levels(self, state, rng, epsilon):
        n = state.n_nodes
        nodes = np.arange(n)
        e_bins = self._bins(state.energies)
        values = np.where(self.feasible_[e_bins], self.q_table_[nodes, state.queues, e_bins], np.inf)
        levels = np.argmin(values, axis=1)
        if epsilon > 0:
            explore = rng.random(n) < epsilon
            if explore.any():
                random_levels = np.floor(rng.random(n) * (e_bins + 1)).astype(np.int64)
                levels = np.where(explore, random_levels, levels)
        return levels, e_bins

    def act(self, state):
        check_is_fitted(self, "q_table_")
        levels, _ = self._levels(state, None, 0.0)
        return np.diag(levels * self.bin_width)

    def _explore(self, state, rng):
        levels, e_bins = self._levels(state, rng, self.epsilon_)
        self._pending = e_bins
        return levels, np.diag(levels * float(self.bin_width))

    def _observe(self, state, levels, cost, next_state):
        # each node is charged its own squared post-transmission backlog
        alloc = levels * float(self.bin_width)
        sent = np.floor(np.log2(1.0 + alloc)).astype(np.int64)
        post = np.maximum(state.queues - sent, 0)
        node_costs = post.astype(float) ** 2
        nodes = np.arange(state.n_nodes)
        e_bins = self._pending
        next_bins = self._bins(next_state.energies)
        nxt = np.where(self.feasible_[next_bins],
                       self.q_table_[nodes, next_state.queues, next_bins], np.inf).min(axis=1)
        idx = (nodes, state.queues, e_bins, levels)
        self.visits_[idx] += 1
        beta = self._rate(self.visits_[idx])
        self.q_table_[idx] = (1.0 - beta) * self.q_table_[idx] + beta * (node_costs + self.gamma * nxt)

    def _learn(self, rng):
        return None

    def _end_episode(self, log):
        self.epsilon_ = max(self.epsilon_min, self.epsilon_ * self.epsilon_decay)

    def _exploration_level(self):
        return self.epsilon_

    def _parameters_finite(self):
        return bool(np.isfinite(self.q_table_).all())
