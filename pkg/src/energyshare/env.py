"""Slotted energy-harvesting sensor network with optional energy sharing.

Each node owns a finite data queue (integer packets, capacity ``d_max``) and a
finite energy buffer (real units, capacity ``e_max``). At the start of a slot
the controller allocates energy: ``alloc[i, i]`` is spent by node ``i`` on its
own transmission and ``alloc[i, j]`` is handed from node ``i`` to node ``j``,
which burns it on transmission in the same slot. Arrivals land at the end of
the slot and overflow is tail-dropped (data) or wasted (energy).

In centralized mode the harvested energy of all nodes is pooled in a single
buffer of capacity ``n_nodes * e_max`` and the allocation is diagonal.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .validation import check_positive, check_rng, check_square

SHARING = "sharing"
NO_SHARING = "nosharing"
CENTRALIZED = "centralized"
MODES = (SHARING, NO_SHARING, CENTRALIZED)

ARRIVAL_KINDS = ("poisson", "deterministic", "empirical")

# slack allowed when checking that an allocation fits the available energy
FEASIBILITY_TOL = 1e-9


def conversion_bits(energy):
    """Bits sent with ``energy`` units: ``log2(1 + energy)``.

    Works elementwise on arrays. Negative energy raises ``ValueError``.
    """
    arr = np.asarray(energy, dtype=float)
    if np.any(arr < 0):
        raise ValueError("conversion_bits is undefined for negative energy")
    out = np.log2(1.0 + arr)
    return float(out) if out.ndim == 0 else out


def transmittable_packets(energy):
    """Whole packets that ``energy`` can carry; fractional capacity is lost."""
    return np.floor(np.log2(1.0 + np.asarray(energy, dtype=float))).astype(np.int64)


@dataclass(frozen=True)
class ArrivalModel:
    """Per-node data and energy arrival laws.

    ``kind="poisson"`` draws ``X_i ~ Poisson(lambda_data[i])`` and
    ``Y_i ~ Poisson(lambda_energy[i])``. The ``deterministic`` and ``empirical``
    kinds are test stubs: the former always returns the means (data rounded to
    whole packets), the latter resamples uniformly from ``empirical_data`` and
    ``empirical_energy`` (one sequence per node).
    """

    lambda_data: tuple
    lambda_energy: tuple
    kind: str = "poisson"
    empirical_data: tuple = None
    empirical_energy: tuple = None

    def __post_init__(self):
        data = np.asarray(self.lambda_data, dtype=float).ravel()
        energy = np.asarray(self.lambda_energy, dtype=float).ravel()
        if data.shape != energy.shape:
            raise ValueError("lambda_data and lambda_energy must have the same length")
        for name, arr in (("lambda_data", data), ("lambda_energy", energy)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be finite and non-negative")
        if self.kind not in ARRIVAL_KINDS:
            raise ValueError(f"unknown arrival kind {self.kind!r}; expected one of {ARRIVAL_KINDS}")
        if self.kind == "empirical":
            if self.empirical_data is None or self.empirical_energy is None:
                raise ValueError("empirical arrivals need empirical_data and empirical_energy")
            if len(self.empirical_data) != data.size or len(self.empirical_energy) != data.size:
                raise ValueError("need one empirical sample sequence per node")
            object.__setattr__(self, "empirical_data",
                               tuple(tuple(int(v) for v in s) for s in self.empirical_data))
            object.__setattr__(self, "empirical_energy",
                               tuple(tuple(float(v) for v in s) for s in self.empirical_energy))
        object.__setattr__(self, "lambda_data", tuple(float(v) for v in data))
        object.__setattr__(self, "lambda_energy", tuple(float(v) for v in energy))

    @property
    def n_nodes(self):
        return len(self.lambda_data)

    def sample(self, rng):
        return sample_arrivals(self, rng)

    def pooled_energy_pmf(self, tail=1e-12):
        """Support and probabilities of the total harvested energy in one slot."""
        if self.kind == "deterministic":
            return np.array([sum(self.lambda_energy)]), np.array([1.0])
        if self.kind == "empirical":
            dist = {0.0: 1.0}
            for samples in self.empirical_energy:
                values, counts = np.unique(samples, return_counts=True)
                probs = counts / counts.sum()
                nxt = {}
                for total, p in dist.items():
                    for v, q in zip(values, probs):
                        key = total + float(v)
                        nxt[key] = nxt.get(key, 0.0) + p * q
                dist = nxt
            support = np.array(sorted(dist))
            return support, np.array([dist[v] for v in support])
        return _poisson_pmf_table(sum(self.lambda_energy), tail)


def _poisson_pmf_table(mean, tail):
    if mean == 0:
        return np.array([0.0]), np.array([1.0])
    probs = []
    p = math.exp(-mean)
    cdf = 0.0
    y = 0
    # underflow guard: start from the log-pmf when exp(-mean) is denormal
    if p == 0.0:
        log_p = -mean
        while True:
            p = math.exp(log_p)
            probs.append(p)
            cdf += p
            if y > mean and 1.0 - cdf < tail:
                break
            y += 1
            log_p += math.log(mean) - math.log(y)
    else:
        while True:
            probs.append(p)
            cdf += p
            if y > mean and 1.0 - cdf < tail:
                break
            y += 1
            p *= mean / y
    return np.arange(len(probs), dtype=float), np.array(probs)


@dataclass
class NetworkState:
    """Queue lengths and energy levels of every node (the MDP joint state).

    In centralized mode ``energies`` holds a single entry, the pooled buffer.
    """

    queues: np.ndarray
    energies: np.ndarray

    def __post_init__(self):
        self.queues = np.asarray(self.queues, dtype=np.int64)
        self.energies = np.asarray(self.energies, dtype=float)

    @property
    def n_nodes(self):
        return self.queues.shape[0]

    def as_vector(self):
        """Interleaved ``(q1, E1, ..., qN, EN)``; pooled energy is appended last."""
        if self.energies.shape == self.queues.shape:
            out = np.empty(2 * self.n_nodes)
            out[0::2] = self.queues
            out[1::2] = self.energies
            return out
        return np.concatenate([self.queues.astype(float), self.energies])

    def copy(self):
        return NetworkState(self.queues.copy(), self.energies.copy())

    def __eq__(self, other):
        return (isinstance(other, NetworkState)
                and np.array_equal(self.queues, other.queues)
                and np.array_equal(self.energies, other.energies))


@dataclass
class StepStats:
    """Per-node bookkeeping for one slot."""

    transmitted: np.ndarray
    dropped: np.ndarray
    wasted: np.ndarray
    post_action_queues: np.ndarray
    arrived: np.ndarray = field(default=None)
    harvested: np.ndarray = field(default=None)

    @property
    def packets_transmitted(self):
        return int(self.transmitted.sum())

    @property
    def packets_dropped(self):
        return int(self.dropped.sum())

    @property
    def energy_wasted(self):
        return float(self.wasted.sum())


@dataclass(frozen=True)
class EnvConfig:
    n_nodes: int
    arrivals: ArrivalModel
    d_max: int = 10
    e_max: float = 10.0
    mode: str = SHARING
    seed: int = 0
    random_start: bool = False

    def __post_init__(self):
        if int(self.n_nodes) < 1:
            raise ValueError("n_nodes must be >= 1")
        if int(self.d_max) < 1:
            raise ValueError("d_max must be >= 1")
        check_positive(float(self.e_max), "e_max")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.arrivals.n_nodes != int(self.n_nodes):
            raise ValueError(
                f"arrival model describes {self.arrivals.n_nodes} nodes, config has {self.n_nodes}"
            )
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "d_max", int(self.d_max))
        object.__setattr__(self, "e_max", float(self.e_max))

    @classmethod
    def from_rates(cls, lambda_data, lambda_energy, **kwargs):
        arrivals = ArrivalModel(tuple(np.ravel(lambda_data)), tuple(np.ravel(lambda_energy)))
        return cls(n_nodes=arrivals.n_nodes, arrivals=arrivals, **kwargs)

    @property
    def n_energy_buffers(self):
        return 1 if self.mode == CENTRALIZED else self.n_nodes

    @property
    def energy_capacity(self):
        """Capacity of each energy buffer (the pool in centralized mode)."""
        return self.n_nodes * self.e_max if self.mode == CENTRALIZED else self.e_max

    @property
    def state_dim(self):
        return self.n_nodes + self.n_energy_buffers

    def with_mode(self, mode):
        return replace(self, mode=mode)

    def with_rates(self, lambda_data=None, lambda_energy=None):
        arrivals = replace(
            self.arrivals,
            lambda_data=self.arrivals.lambda_data if lambda_data is None else tuple(np.ravel(lambda_data)),
            lambda_energy=(self.arrivals.lambda_energy if lambda_energy is None
                           else tuple(np.ravel(lambda_energy))),
        )
        return replace(self, n_nodes=arrivals.n_nodes, arrivals=arrivals)

    def check_state(self, state):
        """Raise ``ValueError`` if ``state`` violates the buffer bounds."""
        if state.queues.shape != (self.n_nodes,):
            raise ValueError(f"expected {self.n_nodes} queues, got {state.queues.shape}")
        if state.energies.shape != (self.n_energy_buffers,):
            raise ValueError(
                f"expected {self.n_energy_buffers} energy buffers, got {state.energies.shape}"
            )
        if np.any(state.queues < 0) or np.any(state.queues > self.d_max):
            raise ValueError("queue length outside [0, d_max]")
        if np.any(state.energies < 0) or np.any(state.energies > self.energy_capacity):
            raise ValueError("energy level outside [0, capacity]")


def sample_arrivals(model, rng):
    """Draw one slot of ``(X, Y)``: integer packets and energy units per node."""
    if model.kind == "poisson":
        # numpy's Poisson sampler is exact at every mean (no normal approximation)
        x = rng.poisson(model.lambda_data)
        y = rng.poisson(model.lambda_energy).astype(float)
        return x.astype(np.int64), y
    if model.kind == "deterministic":
        return (np.rint(model.lambda_data).astype(np.int64),
                np.asarray(model.lambda_energy, dtype=float))
    x = np.array([s[rng.integers(len(s))] for s in model.empirical_data], dtype=np.int64)
    y = np.array([s[rng.integers(len(s))] for s in model.empirical_energy], dtype=float)
    return x, y


def single_stage_cost(post_action_queues):
    """Sum of squared post-transmission queue lengths."""
    q = np.asarray(post_action_queues, dtype=float)
    if np.any(q < 0):
        raise ValueError("queue lengths must be non-negative")
    return float(np.dot(q, q))


def critical_rate(config, tail=1e-12):
    """Expected bits per slot when all harvested energy is spent at once.

    Sums ``pmf(y) * log2(1 + y)`` over the pooled energy distribution,
    truncated where the remaining Poisson tail mass drops below ``tail``.
    """
    arrivals = config.arrivals if isinstance(config, EnvConfig) else config
    support, probs = arrivals.pooled_energy_pmf(tail)
    return float(np.dot(probs, np.log2(1.0 + support)))


def project_action(raw, state, mode=SHARING):
    """Map squashed actor outputs in ``[0, 1]`` onto a feasible allocation.

    Row ``i`` is read as fractions of node ``i``'s energy. When a row asks for
    more than 100% it is renormalized to sum to one; otherwise whatever is
    not asked for stays in the buffer. In no-sharing mode the off-diagonal
    fractions are zeroed first. In centralized mode only the diagonal is used
    and the fractions refer to the shared pool.
    """
    n = state.n_nodes
    raw = np.array(raw, dtype=float)
    if mode == CENTRALIZED and raw.shape == (n,):
        raw = np.diag(raw)
    raw = check_square(raw, n, "raw action")
    if np.any(raw < 0) or np.any(raw > 1) or not np.all(np.isfinite(raw)):
        raise ValueError("raw action entries must lie in [0, 1]")

    if mode == CENTRALIZED:
        fractions = np.diag(raw)
        total = fractions.sum()
        if total > 1.0:
            fractions = fractions / total
        alloc = np.diag(_fit_under(fractions * state.energies[0], state.energies[0]))
        return alloc

    if mode == NO_SHARING:
        raw = np.diag(np.diag(raw))
    sums = raw.sum(axis=1)
    scale = np.divide(1.0, sums, out=np.ones_like(sums), where=sums > 1.0)
    alloc = raw * (scale * state.energies)[:, None]
    for i in range(n):
        alloc[i] = _fit_under(alloc[i], state.energies[i])
    return alloc


def trim_allocation(alloc, state):
    """Cut each node's incoming energy to the least amount that moves the same packets.

    Energy received past ``2**k - 1`` (the price of ``k`` packets) or past what
    empties the queue is lost. Scaling that column down sends the same packets
    and leaves the difference with the senders, so no entry ever grows and a
    feasible allocation stays feasible.
    """
    alloc = np.array(alloc, dtype=float)
    received = alloc.sum(axis=0)
    packets = np.minimum(transmittable_packets(received), state.queues)
    needed = np.exp2(packets) - 1.0
    for j in np.flatnonzero(received > needed):
        column = alloc[:, j] * (needed[j] / received[j])
        # the scaled sum can land an ulp short of the threshold
        while transmittable_packets(column.sum()) < packets[j]:
            column = np.nextafter(column, np.inf)
        if np.all(column <= alloc[:, j]):
            alloc[:, j] = column
    return alloc


def _fit_under(row, budget):
    # rounding in the normalization can overshoot the budget by an ulp
    while row.sum() > budget:
        row = np.nextafter(row, 0.0)
    return row


def check_feasible(config, state, alloc):
    """Raise ``ValueError`` unless ``alloc`` respects the energy constraint."""
    alloc = check_square(alloc, config.n_nodes)
    if np.any(alloc < 0):
        raise ValueError("allocation entries must be non-negative")
    if config.mode == CENTRALIZED:
        if np.any(alloc[~np.eye(config.n_nodes, dtype=bool)] != 0):
            raise ValueError("centralized allocations must be diagonal")
        spent = np.array([alloc.sum()])
    else:
        if config.mode == NO_SHARING and np.any(alloc[~np.eye(config.n_nodes, dtype=bool)] != 0):
            raise ValueError("no-sharing allocations must be diagonal")
        spent = alloc.sum(axis=1)
    if np.any(spent > state.energies + FEASIBILITY_TOL * np.maximum(state.energies, 1.0)):
        raise ValueError("allocation exceeds available energy; project the action first")
    return alloc, spent


def step(config, state, action, arrivals):
    """Advance one slot.

    Returns ``(next_state, cost, stats)``. ``cost`` is the squared
    post-transmission backlog, evaluated before arrivals are added.
    """
    alloc, spent = check_feasible(config, state, action)
    x, y = arrivals
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=float)

    capacity = transmittable_packets(alloc.sum(axis=0))
    transmitted = np.minimum(state.queues, capacity)
    post = state.queues - transmitted
    cost = single_stage_cost(post)

    backlog = post + x
    queues = np.minimum(backlog, config.d_max)
    dropped = backlog - queues

    if config.mode == CENTRALIZED:
        y = np.array([y.sum()])
    level = np.maximum(state.energies - spent, 0.0) + y
    energies = np.minimum(level, config.energy_capacity)
    wasted = level - energies

    stats = StepStats(transmitted=transmitted, dropped=dropped, wasted=wasted,
                      post_action_queues=post, arrived=x, harvested=y)
    return NetworkState(queues, energies), cost, stats


def reset(config, rng=None, random_start=None):
    """Initial state: empty buffers, or uniform random levels if requested."""
    random_start = config.random_start if random_start is None else random_start
    if not random_start:
        return NetworkState(np.zeros(config.n_nodes, dtype=np.int64),
                            np.zeros(config.n_energy_buffers))
    rng = check_rng(rng)
    queues = rng.integers(0, config.d_max + 1, size=config.n_nodes)
    energies = rng.uniform(0.0, config.energy_capacity, size=config.n_energy_buffers)
    return NetworkState(queues, energies)


class SensorNetworkEnv:
    """Stateful wrapper that owns a state and an arrival generator.

    Parameters
    ----------
    config : EnvConfig
    seed : int, Generator or None
        Seeds arrivals (and the random start). Defaults to ``config.seed``.
    """

    def __init__(self, config, seed=None):
        self.config = config
        self.rng = check_rng(config.seed if seed is None else seed)
        self.state = None

    @property
    def n_nodes(self):
        return self.config.n_nodes

    @property
    def mode(self):
        return self.config.mode

    def reset(self, state=None):
        if state is None:
            state = reset(self.config, self.rng)
        else:
            self.config.check_state(state)
        self.state = state
        return state.copy()

    def project(self, raw):
        return project_action(raw, self.state, self.config.mode)

    def step(self, action):
        """Apply ``action`` with freshly sampled arrivals."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        arrivals = sample_arrivals(self.config.arrivals, self.rng)
        self.state, cost, stats = step(self.config, self.state, action, arrivals)
        return self.state.copy(), cost, stats

