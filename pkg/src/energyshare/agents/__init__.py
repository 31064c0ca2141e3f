from .base import BaseController, TrainingDivergedError, TrainingLog
from .buffer import ReplayBuffer, Transition
from .ddpg import DdpgAgent
from .noise import GaussianNoise, OrnsteinUhlenbeckNoise, make_noise
from .dqn import CatalogTooLargeError, DqnAgent, build_action_catalog
from .tabular import TabularQAgent, discretize

AGENTS = {"sharing": DdpgAgent, "centralized": DqnAgent, "nosharing": TabularQAgent}
