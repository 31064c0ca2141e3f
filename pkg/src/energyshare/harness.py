"""Training/evaluation protocols and the comparison sweeps."""

import csv
import io
import os
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone

from .agents import AGENTS, CatalogTooLargeError, TrainingDivergedError
from .env import EnvConfig, SensorNetworkEnv
from .validation import check_rng

MODELS = ("sharing", "centralized", "nosharing")
DEFAULT_GRID = tuple(0.5 * k for k in range(1, 10))

SWEEP_COLUMNS = ("sweep", "n_nodes", "lambda_1", "lambda_2", "lambda_data", "model", "seed",
                 "avg_queue_length", "data_loss_pct", "est_discounted_cost", "status", "error")
METRIC_COLUMNS = ("seed", "n_slots", "avg_queue_length", "data_loss_pct", "est_discounted_cost",
                  "arrived", "transmitted", "dropped", "energy_wasted", "per_node_queue",
                  "per_node_loss_pct")


@dataclass
class Metrics:
    """Long-run performance of a policy over the measured (post burn-in) slots."""

    avg_queue_length: float
    data_loss_pct: float
    est_discounted_cost: float
    per_node_queue: np.ndarray
    per_node_loss_pct: np.ndarray
    n_slots: int
    arrived: int = 0
    transmitted: int = 0
    dropped: int = 0
    queue_change: int = 0
    energy_wasted: float = 0.0
    per_seed: list = field(default_factory=list)

    def rows(self):
        """One CSV row per evaluation seed followed by the seed average."""
        out = [m._row(seed) for seed, m in self.per_seed]
        out.append(self._row("mean"))
        return out

    def _row(self, seed):
        return {
            "seed": seed, "n_slots": self.n_slots,
            "avg_queue_length": self.avg_queue_length, "data_loss_pct": self.data_loss_pct,
            "est_discounted_cost": self.est_discounted_cost, "arrived": self.arrived,
            "transmitted": self.transmitted, "dropped": self.dropped,
            "energy_wasted": self.energy_wasted,
            "per_node_queue": ";".join(repr(float(v)) for v in self.per_node_queue),
            "per_node_loss_pct": ";".join(repr(float(v)) for v in self.per_node_loss_pct),
        }


def _loss_pct(dropped, arrived):
    return np.where(arrived > 0, 100.0 * dropped / np.maximum(arrived, 1), 0.0)


def train(env, agent, budget=None, rng=None):
    """Fit a fresh copy of ``agent`` on ``env``.

    ``budget`` is ``(n_episodes, episode_length)``; ``None`` keeps the agent's
    own settings. ``rng`` (an int seed) overrides the agent's random_state.
    Returns ``(trained_agent, training_log)``.
    """
    agent = clone(agent)
    if budget is not None:
        n_episodes, episode_length = budget
        agent.set_params(n_episodes=int(n_episodes), episode_length=int(episode_length))
    if rng is not None:
        agent.set_params(random_state=rng)
    agent.fit(env)
    return agent, agent.training_log_


def _evaluate_one(config, policy, horizon, burn_in, seed, gamma):
    env = SensorNetworkEnv(config, seed=seed)
    state = env.reset()
    n = config.n_nodes
    queue_sum = np.zeros(n)
    arrived = np.zeros(n, dtype=np.int64)
    dropped = np.zeros(n, dtype=np.int64)
    transmitted = np.zeros(n, dtype=np.int64)
    wasted = 0.0
    discounted = 0.0
    weight = 1.0
    start_queues = None
    for t in range(horizon):
        if t == burn_in:
            start_queues = state.queues.copy()
        alloc = policy.act(state)
        next_state, cost, stats = env.step(alloc)
        discounted += weight * cost
        weight *= gamma
        if t >= burn_in:
            queue_sum += state.queues
            arrived += stats.arrived
            dropped += stats.dropped
            transmitted += stats.transmitted
            wasted += stats.energy_wasted
        state = next_state
    n_slots = horizon - burn_in
    per_node_queue = queue_sum / n_slots
    total_arrived = int(arrived.sum())
    return Metrics(
        avg_queue_length=float(per_node_queue.mean()),
        data_loss_pct=float(_loss_pct(dropped.sum(), total_arrived)),
        est_discounted_cost=float(discounted),
        per_node_queue=per_node_queue,
        per_node_loss_pct=_loss_pct(dropped, arrived),
        n_slots=n_slots,
        arrived=total_arrived,
        transmitted=int(transmitted.sum()),
        dropped=int(dropped.sum()),
        queue_change=int(state.queues.sum() - start_queues.sum()),
        energy_wasted=float(wasted),
    )


def evaluate(config, policy, horizon=20_000, burn_in=1_000, seeds=(0, 1, 2, 3, 4), gamma=0.9):
    """Run ``policy`` greedily and average its long-run metrics over ``seeds``.

    Each seed gets an independent arrival stream starting from the config's
    initial state. Queue length and loss are measured over slots
    ``burn_in .. horizon - 1``; the discounted cost is accumulated from slot 0.
    """
    if horizon <= burn_in:
        raise ValueError("horizon must exceed burn_in")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one evaluation seed")
    runs = [(s, _evaluate_one(config, policy, horizon, burn_in, s, gamma)) for s in seeds]
    ms = [m for _, m in runs]
    return Metrics(
        avg_queue_length=float(np.mean([m.avg_queue_length for m in ms])),
        data_loss_pct=float(np.mean([m.data_loss_pct for m in ms])),
        est_discounted_cost=float(np.mean([m.est_discounted_cost for m in ms])),
        per_node_queue=np.mean([m.per_node_queue for m in ms], axis=0),
        per_node_loss_pct=np.mean([m.per_node_loss_pct for m in ms], axis=0),
        n_slots=horizon - burn_in,
        arrived=sum(m.arrived for m in ms),
        transmitted=sum(m.transmitted for m in ms),
        dropped=sum(m.dropped for m in ms),
        queue_change=sum(m.queue_change for m in ms),
        energy_wasted=float(sum(m.energy_wasted for m in ms)),
        per_seed=runs,
    )


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a sweep needs; all fields have desk-scale defaults.

    ``agent_params`` maps a model name to estimator parameters. Training
    budgets are per model (``n_episodes`` / ``episode_length`` entries in
    ``agent_params``) and otherwise default to ``n_episodes`` x
    ``episode_length``, multiplied by ``n_nodes / 2`` when ``scale_budget``.
    ``workers=None`` runs one process per job up to the number of CPUs.
    """

    base: EnvConfig = None
    models: tuple = MODELS
    agent_params: dict = field(default_factory=dict)
    n_episodes: int = 2000
    episode_length: int = 200
    scale_budget: bool = True
    horizon: int = 20_000
    burn_in: int = 1_000
    eval_seeds_per_run: int = 1
    seeds: tuple = (0, 1, 2, 3, 4)
    grid: tuple = DEFAULT_GRID
    fixed_rate: float = 0.5
    n_values: tuple = (2, 4, 6, 10)
    rate_range: tuple = (0.0, 4.0)
    gamma: float = 0.9
    workers: int = None

    def __post_init__(self):
        if self.base is None:
            object.__setattr__(self, "base", EnvConfig.from_rates([0.5, 2.0], [5.0, 5.0]))
        if self.horizon <= self.burn_in:
            raise ValueError("horizon must exceed burn_in")
        if not self.seeds:
            raise ValueError("need at least one seed")
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}; expected a subset of {MODELS}")

    def make_agent(self, model, n_nodes):
        params = dict(self.agent_params.get(model, {}))
        scale = max(1.0, n_nodes / 2.0) if self.scale_budget else 1.0
        params.setdefault("n_episodes", int(np.ceil(self.n_episodes * scale)))
        params.setdefault("episode_length", self.episode_length)
        return AGENTS[model](**params)


def run_cell(spec, config, model, seed):
    """Train and evaluate one model on one config for one seed; never raises."""
    row = {"model": model, "seed": seed, "status": "ok", "error": ""}
    config = replace(config.with_mode(model), seed=int(seed))
    try:
        agent = spec.make_agent(model, config.n_nodes).set_params(random_state=int(seed))
        agent.fit(config)
        eval_seeds = [10_000 + 1_000 * int(seed) + k for k in range(spec.eval_seeds_per_run)]
        m = evaluate(config, agent, spec.horizon, spec.burn_in, eval_seeds, spec.gamma)
        row.update(avg_queue_length=m.avg_queue_length, data_loss_pct=m.data_loss_pct,
                   est_discounted_cost=m.est_discounted_cost)
    except CatalogTooLargeError as exc:
        row.update(status="skipped", error=str(exc))
    except (TrainingDivergedError, FloatingPointError, ValueError) as exc:
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def _describe(config):
    rates = config.arrivals.lambda_data
    return {"n_nodes": config.n_nodes,
            "lambda_1": rates[0], "lambda_2": rates[1] if len(rates) > 1 else "",
            "lambda_data": ";".join(repr(r) for r in rates)}


def _run_jobs(spec, sweep, jobs):
    workers = spec.workers or min(len(jobs), os.cpu_count() or 1)
    cells = Parallel(n_jobs=max(1, workers))(
        delayed(run_cell)(spec, config, model, seed) for config, model, seed in jobs
    )
    rows = []
    for (config, _, _), cell in zip(jobs, cells):
        rows.append({"sweep": sweep, **_describe(config), **cell})
    return rows + aggregate(rows)


def aggregate(rows):
    """Seed-averaged rows, one per (config, model); skipped/failed seeds are left out."""
    groups = {}
    for r in rows:
        key = (r["sweep"], r["n_nodes"], r["lambda_data"], r["model"])
        groups.setdefault(key, []).append(r)
    out = []
    for members in groups.values():
        ok = [r for r in members if r["status"] == "ok"]
        first = members[0]
        row = {k: first[k] for k in ("sweep", "n_nodes", "lambda_1", "lambda_2", "lambda_data",
                                     "model")}
        row["seed"] = "mean"
        if ok:
            for k in ("avg_queue_length", "data_loss_pct", "est_discounted_cost"):
                row[k] = float(np.mean([r[k] for r in ok]))
            row["status"] = "ok"
            row["error"] = ""
        else:
            row["status"] = members[0]["status"]
            row["error"] = members[0]["error"]
        out.append(row)
    return out


def sweep_two_node(spec):
    """Vary the second node's data rate with the first fixed; every model, every seed."""
    jobs = []
    for rate in spec.grid:
        config = spec.base.with_rates([spec.fixed_rate, rate], spec.base.arrivals.lambda_energy[:1] * 2)
        jobs.extend((config, model, seed) for model in spec.models for seed in spec.seeds)
    return _run_jobs(spec, "two_node", jobs)


def sweep_heatmap(spec):
    """Sharing model on the full grid of (rate_1, rate_2) pairs."""
    energy = spec.base.arrivals.lambda_energy[:1] * 2
    jobs = [(spec.base.with_rates([r1, r2], energy), "sharing", seed)
            for r1 in spec.grid for r2 in spec.grid for seed in spec.seeds]
    return _run_jobs(spec, "heatmap", jobs)


def scalability_rates(n_nodes, seed, low=0.0, high=4.0):
    """Random per-node data rates in ``[low, high]`` whose mean is exactly the midpoint.

    Rates come in mirrored pairs ``(u, low + high - u)``; an odd node gets the
    midpoint.
    """
    rng = check_rng(np.random.SeedSequence([int(n_nodes), int(seed)]))
    half = rng.uniform(low, high, n_nodes // 2)
    rates = np.concatenate([half, low + high - half, [0.5 * (low + high)] * (n_nodes % 2)])
    return rng.permutation(rates)


def sweep_scalability(spec):
    """Every model on networks of increasing size; DQN beyond its cap is skipped."""
    energy = spec.base.arrivals.lambda_energy[0]
    jobs = []
    for n in spec.n_values:
        for seed in spec.seeds:
            rates = scalability_rates(n, seed, *spec.rate_range)
            config = spec.base.with_rates(rates, [energy] * n)
            jobs.extend((config, model, seed) for model in spec.models)
    rows = _run_jobs(spec, "scalability", jobs)
    # rates differ per seed, so average per (N, model) instead of per config
    per_seed = [r for r in rows if r["seed"] != "mean"]
    summary = []
    for n in spec.n_values:
        for model in spec.models:
            members = [dict(r, lambda_data="random", lambda_1="", lambda_2="")
                       for r in per_seed if r["n_nodes"] == n and r["model"] == model]
            if members:
                summary.extend(aggregate(members))
    return per_seed + summary


SWEEPS = {"two_node": sweep_two_node, "heatmap": sweep_heatmap, "scalability": sweep_scalability}


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return "" if value is None else str(value)


def to_csv(rows, columns, path=None):
    """Write rows with a header; period decimals, comma separators, LF endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([format_value(r.get(c, "")) for c in columns])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
