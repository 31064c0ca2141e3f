"""Fixed-capacity replay memory with uniform minibatch sampling."""

from typing import NamedTuple

import numpy as np


class Transition(NamedTuple):
    """One stored step, or a stacked minibatch of steps.

    ``state`` and ``next_state`` are flattened ``(q1, E1, ..., qN, EN)``
    vectors; ``action`` is whatever the agent stored (raw actor output for
    DDPG, the catalog index for DQN). There is no terminal flag: the task is
    infinite-horizon.
    """

    state: np.ndarray
    action: np.ndarray
    cost: float
    next_state: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entry is overwritten when full."""

    def __init__(self, capacity=100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._states = None
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def _allocate(self, t):
        state_dim = np.size(t.state)
        action_dim = np.size(t.action)
        self._states = np.empty((self.capacity, state_dim))
        self._actions = np.empty((self.capacity, action_dim))
        self._costs = np.empty(self.capacity)
        self._next_states = np.empty((self.capacity, state_dim))

    def push(self, t):
        if self._states is None:
            self._allocate(t)
        if np.size(t.state) != self._states.shape[1] or np.size(t.action) != self._actions.shape[1]:
            raise ValueError("transition dimensions differ from earlier entries")
        if t.cost < 0:
            raise ValueError("costs must be non-negative")
        i = self._cursor
        self._states[i] = np.ravel(t.state)
        self._actions[i] = np.ravel(t.action)
        self._costs[i] = t.cost
        self._next_states[i] = np.ravel(t.next_state)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _slot(self, k):
        # position of the k-th oldest entry
        start = self._cursor if self._size == self.capacity else 0
        return (start + k) % self.capacity

    def __getitem__(self, k):
        if not -self._size <= k < self._size:
            raise IndexError("replay index out of range")
        i = self._slot(k % self._size)
        return Transition(self._states[i].copy(), self._actions[i].copy(),
                          float(self._costs[i]), self._next_states[i].copy())

    def __iter__(self):
        return (self[k] for k in range(self._size))

    def sample_indices(self, k, rng):
        if self._size < k:
            raise ValueError(f"cannot sample {k} transitions from a buffer holding {self._size}")
        return rng.integers(0, self._size, size=k)

    def sample(self, k, rng):
        """``k`` uniform draws with replacement, stacked into one Transition."""
        idx = self.sample_indices(k, rng)
        return Transition(self._states[idx], self._actions[idx],
                          self._costs[idx], self._next_states[idx])
