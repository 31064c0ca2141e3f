"""Actor-critic controller that decides transmission and sharing energy.

The actor maps the normalised joint state ``(q_i / d_max, E_i / e_max)`` to
``N * N`` sigmoid outputs, one per entry of the allocation matrix, read as
fractions of the sending node's energy. The critic estimates the discounted
cost-to-go of a (state, raw action) pair; the actor is trained to descend it.
"""

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..env import SHARING, project_action, trim_allocation
from ..neural import FeedforwardNetwork, apply_update, make_optimizer, soft_update
from .base import BaseController
from .buffer import ReplayBuffer, Transition
from .noise import make_noise

TARGET_SCHEDULES = ("soft", "best")


class DdpgAgent(BaseController):
    """Deep deterministic policy gradient for the energy-sharing network.

    Parameters
    ----------
    hidden_sizes : tuple of int, default=(2, 4)
        Hidden widths shared by actor and critic.
    hidden_activation : {'relu', 'tanh', 'sigmoid', 'identity'}, default='tanh'
    gamma : float, default=0.9
        Discount factor of the cost-to-go.
    tau : float, default=0.005
        Blend factor of the per-step target refresh when
        ``target_update='soft'``.
    target_update : {'soft', 'best'}, default='soft'
        ``'best'`` copies the live networks into the targets whenever the mean
        episode cost over the last ``best_window`` episodes beats the best value
        seen so far; train steps never touch the targets in that mode.
    best_window : int, default=10
    batch_size : int, default=64
    buffer_capacity : int, default=100_000
    actor_lr, critic_lr : float, default=1e-4, 1e-3
    optimizer : {'adam', 'sgd'}, default='adam'
    noise : {'gaussian', 'ornstein_uhlenbeck'}, default='gaussian'
    noise_sigma : float, default=0.2
    noise_decay : float, default=0.995
        Multiplicative shrink of the noise scale after every episode.
    act_with_target : bool, default=False
        Let the target actor choose the actions that are executed.
    trim_waste : bool, default=True
        Pass projected allocations through :func:`trim_allocation`, so energy
        a receiver cannot turn into whole packets stays with its senders.
    init_fraction : float or None, default=None
        Initial value of every actor output, set through the output-layer
        bias. ``None`` uses ``min(1/2, 1/n_nodes)``, so that each node starts
        out spending its whole battery spread evenly over the network instead
        of asking for ``n_nodes / 2`` times what it holds.
    cost_scale : float or None, default=None
        Multiplier applied to costs before they reach the critic. ``None``
        uses ``1 / (n_nodes * d_max**2)`` so per-slot costs lie in ``[0, 1]``.
    n_episodes, episode_length : int, default=2000, 200
    random_state : int, Generator or None
    """

    mode = SHARING

    def __init__(self, hidden_sizes=(2, 4), hidden_activation="tanh", gamma=0.9, tau=0.005,
                 target_update="soft", best_window=10, batch_size=64,
                 buffer_capacity=100_000, actor_lr=1e-4, critic_lr=1e-3, optimizer="adam",
                 noise="gaussian", noise_sigma=0.2, noise_decay=0.995,
                 act_with_target=False, trim_waste=True, init_fraction=None, cost_scale=None,
                 n_episodes=2000, episode_length=200, random_state=None):
        self.hidden_sizes = hidden_sizes
        self.hidden_activation = hidden_activation
        self.gamma = gamma
        self.tau = tau
        self.target_update = target_update
        self.best_window = best_window
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.optimizer = optimizer
        self.noise = noise
        self.noise_sigma = noise_sigma
        self.noise_decay = noise_decay
        self.act_with_target = act_with_target
        self.trim_waste = trim_waste
        self.init_fraction = init_fraction
        self.cost_scale = cost_scale
        self.n_episodes = n_episodes
        self.episode_length = episode_length
        self.random_state = random_state

    def _initialize(self, config, rng):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.target_update not in TARGET_SCHEDULES:
            raise ValueError(f"target_update must be one of {TARGET_SCHEDULES}")
        n = config.n_nodes
        hidden = list(self.hidden_sizes)
        self.actor_ = FeedforwardNetwork.build([2 * n, *hidden, n * n], self.hidden_activation,
                                               "sigmoid", rng)
        self.critic_ = FeedforwardNetwork.build([2 * n + n * n, *hidden, 1],
                                                self.hidden_activation, "identity", rng)
        fraction = min(0.5, 1.0 / n) if self.init_fraction is None else float(self.init_fraction)
        if not 0.0 < fraction < 1.0:
            raise ValueError("init_fraction must lie strictly between 0 and 1")
        self.actor_.biases[-1][:] = np.log(fraction / (1.0 - fraction))
        self.target_actor_ = self.actor_.copy()
        self.target_critic_ = self.critic_.copy()
        self.actor_optimizer_ = make_optimizer(self.optimizer, self.actor_lr)
        self.critic_optimizer_ = make_optimizer(self.optimizer, self.critic_lr)
        self.buffer_ = ReplayBuffer(self.buffer_capacity)
        self.noise_ = make_noise(self.noise, n * n, self.noise_sigma, self.noise_decay)
        self.state_scale_ = np.tile([1.0 / config.d_max, 1.0 / config.e_max], n)
        self.cost_scale_ = (1.0 / (n * config.d_max ** 2) if self.cost_scale is None
                            else float(self.cost_scale))
        self.best_score_ = np.inf
        self.n_target_updates_ = 0

    def _encode(self, vectors):
        return vectors * self.state_scale_

    def select_action(self, state, explore=False, rng=None):
        """Return ``(raw, allocation)`` for one state.

        ``raw`` is the flattened ``N * N`` vector in ``[0, 1]`` (actor output
        plus exploration noise, clipped); ``allocation`` is its projection,
        trimmed when ``trim_waste`` is set.
        """
        check_is_fitted(self, "actor_")
        policy = self.target_actor_ if self.act_with_target else self.actor_
        raw = policy.forward(self._encode(state.as_vector()))
        if explore:
            raw = np.clip(raw + self.noise_.sample(rng), 0.0, 1.0)
        n = self.n_nodes_
        alloc = project_action(raw.reshape(n, n), state, self.mode)
        return raw, trim_allocation(alloc, state) if self.trim_waste else alloc

    def act(self, state):
        return self.select_action(state, explore=False)[1]

    def _explore(self, state, rng):
        return self.select_action(state, explore=True, rng=rng)

    def _observe(self, state, raw, cost, next_state):
        self.buffer_.push(Transition(state.as_vector(), raw, cost, next_state.as_vector()))

    def _learn(self, rng):
        if len(self.buffer_) < self.batch_size:
            return None
        return self.train_step(rng)

    def train_step(self, rng):
        """One critic and one actor update from a uniform minibatch.

        Returns ``(critic_loss, actor_objective)`` where the objective is the
        mean critic estimate of the actor's own actions (lower is better).
        """
        batch = self.buffer_.sample(self.batch_size, rng)
        s = self._encode(batch.state)
        s_next = self._encode(batch.next_state)
        a = batch.action
        cost = batch.cost * self.cost_scale_
        k = len(cost)

        a_next = self.target_actor_.forward(s_next)
        q_next = self.target_critic_.forward(np.hstack([s_next, a_next]))[:, 0]
        target = cost + self.gamma * q_next

        q, cache = self.critic_.forward_cache(np.hstack([s, a]))
        err = q[:, 0] - target
        critic_loss = float(np.mean(err * err))
        grads, _ = self.critic_.backward_cached(cache, (2.0 / k) * err[:, None],
                                                need_input_grad=False)
        apply_update(self.critic_, grads, self.critic_optimizer_)

        a_pi, actor_cache = self.actor_.forward_cache(s)
        q_pi, critic_cache = self.critic_.forward_cache(np.hstack([s, a_pi]))
        _, dq_dinput = self.critic_.backward_cached(critic_cache, np.full((k, 1), 1.0 / k))
        actor_grads, _ = self.actor_.backward_cached(actor_cache, dq_dinput[:, s.shape[1]:],
                                                     need_input_grad=False)
        apply_update(self.actor_, actor_grads, self.actor_optimizer_)

        if self.target_update == "soft":
            soft_update(self.target_actor_, self.actor_, self.tau)
            soft_update(self.target_critic_, self.critic_, self.tau)
        return critic_loss, float(np.mean(q_pi))

    def _end_episode(self, log):
        self.noise_.end_episode()
        if self.target_update == "best" and len(log) >= self.best_window:
            score = float(np.mean(log.column("mean_cost")[-self.best_window:]))
            if score < self.best_score_:
                self.best_score_ = score
                soft_update(self.target_actor_, self.actor_, 1.0)
                soft_update(self.target_critic_, self.critic_, 1.0)
                self.n_target_updates_ += 1

    def _exploration_level(self):
        return self.noise_.sigma

    def _parameters_finite(self):
        return self.actor_.is_finite() and self.critic_.is_finite()

    def networks(self):
        check_is_fitted(self, "actor_")
        return {"actor": self.actor_, "critic": self.critic_,
                "target_actor": self.target_actor_, "target_critic": self.target_critic_}
