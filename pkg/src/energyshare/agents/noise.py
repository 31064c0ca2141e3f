"""Exploration noise added to actor outputs; the scale shrinks every episode."""

import numpy as np


class GaussianNoise:
    def __init__(self, size, sigma=0.2, decay=0.995, min_sigma=0.0):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0.0 < decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        self.size = size
        self.sigma = float(sigma)
        self.decay = float(decay)
        self.min_sigma = float(min(min_sigma, sigma))

    def reset(self):
        pass

    def sample(self, rng):
        return self.sigma * rng.standard_normal(self.size)

    def end_episode(self):
        self.sigma = max(self.min_sigma, self.sigma * self.decay)


class OrnsteinUhlenbeckNoise(GaussianNoise):
    """Mean-reverting correlated noise, ``x += theta * (mu - x) + sigma * N(0, 1)``."""

    def __init__(self, size, sigma=0.2, decay=0.995, min_sigma=0.0, theta=0.15, mu=0.0):
        super().__init__(size, sigma, decay, min_sigma)
        self.theta = theta
        self.mu = mu
        self.reset()

    def reset(self):
        self.x = np.full(self.size, self.mu, dtype=float)

    def sample(self, rng):
        self.x = self.x + self.theta * (self.mu - self.x) + self.sigma * rng.standard_normal(self.size)
        return self.x.copy()

    def end_episode(self):
        super().end_episode()
        self.reset()


def make_noise(kind, size, sigma, decay, min_sigma=0.0):
    if kind == "gaussian":
        return GaussianNoise(size, sigma, decay, min_sigma)
    if kind in ("ou", "ornstein_uhlenbeck"):
        return OrnsteinUhlenbeckNoise(size, sigma, decay, min_sigma)
    raise ValueError(f"unknown noise kind {kind!r}; expected 'gaussian' or 'ornstein_uhlenbeck'")
