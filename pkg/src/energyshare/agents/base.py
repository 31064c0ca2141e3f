"""Common estimator plumbing for the energy-management controllers.

Every controller follows the scikit-learn estimator conventions: hyper-
parameters are plain ``__init__`` arguments (so ``get_params``/``set_params``
and ``clone`` work), ``fit(env)`` trains from scratch, and learned state lives
in attributes with a trailing underscore.
"""

import csv
import io
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..env import EnvConfig, NetworkState, SensorNetworkEnv
from ..validation import check_rng

LOG_COLUMNS = ("episode", "mean_cost", "critic_loss", "actor_objective", "exploration")


class TrainingDivergedError(FloatingPointError):
    """Raised when parameters or losses stop being finite during training."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


class TrainingLog:
    """Per-episode training record."""

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, TrainingLog) and self.to_csv() == other.to_csv()

    def append(self, **row):
        self.rows.append({c: row.get(c, float("nan")) for c in LOG_COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(r[c]) for c in LOG_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if math.isnan(value) else repr(value)


def state_from_vector(vector, n_nodes):
    """Inverse of :meth:`NetworkState.as_vector`."""
    v = np.asarray(vector, dtype=float)
    if v.shape == (2 * n_nodes,):
        return NetworkState(np.rint(v[0::2]).astype(np.int64), v[1::2])
    if v.shape == (n_nodes + 1,):
        return NetworkState(np.rint(v[:n_nodes]).astype(np.int64), v[n_nodes:])
    raise ValueError(f"state vector of length {v.shape} does not describe {n_nodes} nodes")


class BaseController(BaseEstimator):
    """Training loop shared by all controllers.

    Subclasses set ``mode`` and implement ``_initialize``, ``_explore``,
    ``_observe``, ``_learn``, ``_end_episode`` and ``act``.
    """

    mode = None

    def _make_env(self, env):
        if isinstance(env, EnvConfig):
            env = SensorNetworkEnv(env)
        if not isinstance(env, SensorNetworkEnv):
            raise TypeError("fit expects an EnvConfig or a SensorNetworkEnv")
        if env.mode != self.mode:
            raise ValueError(
                f"{type(self).__name__} controls a {self.mode!r} network, "
                f"got an environment in {env.mode!r} mode"
            )
        return env

    def fit(self, env, y=None):
        """Train from scratch on ``env`` for ``n_episodes * episode_length`` slots.

        ``env`` may be an :class:`EnvConfig` (its seed drives the arrivals) or
        a ready :class:`SensorNetworkEnv`. ``y`` is ignored.
        """
        env = self._make_env(env)
        rng = check_rng(self.random_state)
        self.setup(env.config, rng)
        log = self.training_log_

        for episode in range(self.n_episodes):
            state = env.reset()
            costs = []
            losses = []
            for _ in range(self.episode_length):
                stored, alloc = self._explore(state, rng)
                next_state, cost, _ = env.step(alloc)
                self._observe(state, stored, cost, next_state)
                costs.append(cost)
                try:
                    out = self._learn(rng)
                except FloatingPointError as exc:
                    log.append(episode=episode, mean_cost=float(np.mean(costs)),
                               exploration=self._exploration_level())
                    raise TrainingDivergedError(
                        f"{type(self).__name__} diverged in episode {episode}: {exc}", log) from exc
                if out is not None:
                    losses.append(out)
                    self.n_train_steps_ += 1
                state = next_state
            critic_loss, actor_obj = (np.mean(losses, axis=0) if losses else (np.nan, np.nan))
            row = dict(episode=episode, mean_cost=float(np.mean(costs)) if costs else np.nan,
                       critic_loss=float(critic_loss), actor_objective=float(actor_obj),
                       exploration=self._exploration_level())
            log.append(**row)
            if not self._parameters_finite() or (losses and not np.isfinite(critic_loss)):
                raise TrainingDivergedError(
                    f"{type(self).__name__} diverged in episode {episode}: "
                    f"loss={critic_loss!r}", log)
            self._end_episode(log)
        return self

    def setup(self, config, random_state=None):
        """Create untrained learned state for ``config`` without running any slots."""
        if config.mode != self.mode:
            raise ValueError(f"{type(self).__name__} needs a {self.mode!r} config")
        rng = check_rng(self.random_state if random_state is None else random_state)
        self.config_ = config
        self.n_nodes_ = config.n_nodes
        self._initialize(config, rng)
        self.training_log_ = TrainingLog()
        self.n_train_steps_ = 0
        return self

    def _parameters_finite(self):
        return True

    def _exploration_level(self):
        return np.nan

    def predict(self, X):
        """Greedy allocations for a batch of flattened state vectors.

        Returns an array of shape ``(n_samples, n_nodes, n_nodes)``.
        """
        check_is_fitted(self, "config_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([self.act(state_from_vector(x, self.n_nodes_)) for x in X])

    def act(self, state):
        """Greedy, noise-free allocation for one :class:`NetworkState`."""
        raise NotImplementedError
