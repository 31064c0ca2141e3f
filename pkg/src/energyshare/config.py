"""Run configuration: nested YAML with documented defaults and strict keys.

Values are resolved in order: built-in defaults, the YAML file, environment
variables, then explicit overrides (command-line flags). An environment
variable ``ENERGYSHARE_<PATH>`` sets the key whose dotted path is ``<PATH>``
with ``__`` as the separator, e.g. ``ENERGYSHARE_ENV__N_NODES=4`` or
``ENERGYSHARE_AGENT__SHARING__GAMMA=0.95``; its value is parsed as YAML.
"""

import copy
import os

import numpy as np
import yaml

from .agents import AGENTS
from .env import ARRIVAL_KINDS, MODES, ArrivalModel, EnvConfig
from .harness import DEFAULT_GRID, MODELS, SWEEPS, ExperimentSpec

ENV_PREFIX = "ENERGYSHARE_"

# reserved agent parameters that other sections control
_DERIVED_AGENT_KEYS = ("random_state",)

DEFAULTS = {
    # master seed: training arrivals and agent initialisation/exploration
    "seed": 0,
    # which controller train/evaluate use: sharing | centralized | nosharing
    "model": "sharing",
    # output directory for every artifact
    "out": "results",
    # parallel jobs for sweeps; null = one per job up to the CPU count
    "workers": None,
    "env": {
        # inferred from the rate lists when null; scalar rates are broadcast
        "n_nodes": None,
        "lambda_data": [0.5, 2.0],
        "lambda_energy": 5.0,
        "d_max": 10,
        "e_max": 10.0,
        # poisson | deterministic | empirical
        "arrivals": "poisson",
        # per-node sample lists, only read for empirical arrivals
        "empirical_data": None,
        "empirical_energy": None,
        "random_start": False,
    },
    # estimator parameters per model; anything left out keeps the class default
    "agent": {model: {} for model in MODELS},
    "train": {
        "n_episodes": 2000,
        "episode_length": 200,
    },
    "evaluate": {
        "horizon": 20_000,
        "burn_in": 1_000,
        # null = five streams derived from the master seed
        "seeds": None,
        "gamma": 0.9,
        # directory written by ``train``; defaults to <out>/checkpoint
        "checkpoint": None,
    },
    "sweep": {
        # two_node | heatmap | scalability
        "kind": "two_node",
        "models": list(MODELS),
        "seeds": [0, 1, 2, 3, 4],
        "grid": list(DEFAULT_GRID),
        "fixed_rate": 0.5,
        "n_values": [2, 4, 6, 10],
        "rate_range": [0.0, 4.0],
        # multiply the training budget by n_nodes / 2
        "scale_budget": True,
        "eval_seeds_per_run": 1,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _merge(base, update, path=""):
    for key, value in update.items():
        dotted = f"{path}{key}"
        if not isinstance(key, str) or key not in base:
            raise ConfigError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if path == "agent." and value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted!r} must be a mapping")
            if path == "agent.":
                base[key].update(value)
            else:
                _merge(base[key], value, dotted + ".")
        else:
            base[key] = value


def _nest(dotted, value):
    out = value
    for part in reversed(dotted.split(".")):
        out = {part: out}
    return out


def env_overrides(environ=None):
    """Mapping of overrides found in ``ENERGYSHARE_*`` environment variables."""
    environ = os.environ if environ is None else environ
    found = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        try:
            value = yaml.safe_load(environ[name])
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {name}: {exc}") from None
        found[dotted] = value
    return found


def load_config(path=None, environ=None, overrides=None):
    """Resolve a :class:`RunConfig` from defaults, a YAML file, env vars and overrides.

    ``overrides`` maps dotted keys (``"env.n_nodes"``) to values.
    """
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from None
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"config file {path} must hold a mapping at the top level")
            _merge(data, loaded)
    layered = dict(env_overrides(environ))
    layered.update(overrides or {})
    for dotted, value in layered.items():
        _merge(data, _nest(dotted, value))
    return RunConfig(data)


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _plain(value):
    """YAML-friendly copy (tuples to lists, numpy scalars to Python)."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


class RunConfig:
    """A validated, fully resolved configuration."""

    def __init__(self, data):
        self.data = data
        self._validate()

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def model(self):
        return self.data["model"]

    @property
    def out(self):
        return self.data["out"]

    def _check(self, ok, key, message):
        if not ok:
            raise ConfigError(f"config key {key!r} {message}")

    def _validate(self):
        d = self.data
        self._check(isinstance(d["seed"], int) and d["seed"] >= 0, "seed",
                    "must be a non-negative integer")
        self._check(d["model"] in MODES, "model", f"must be one of {MODES}")
        self._check(d["workers"] is None or (isinstance(d["workers"], int) and d["workers"] >= 1),
                    "workers", "must be a positive integer or null")
        self._check(isinstance(d["out"], str) and d["out"], "out", "must be a directory path")
        e = d["env"]
        self._check(e["arrivals"] in ARRIVAL_KINDS, "env.arrivals", f"must be one of {ARRIVAL_KINDS}")
        for key in ("train.n_episodes", "train.episode_length", "evaluate.horizon",
                    "evaluate.burn_in", "sweep.eval_seeds_per_run", "env.d_max"):
            section, name = key.split(".")
            value = d[section][name]
            self._check(isinstance(value, int) and not isinstance(value, bool) and value >= 0,
                        key, "must be a non-negative integer")
        self._check(d["evaluate"]["horizon"] > d["evaluate"]["burn_in"], "evaluate.horizon",
                    "must exceed evaluate.burn_in")
        self._check(0.0 <= float(d["evaluate"]["gamma"]) < 1.0, "evaluate.gamma",
                    "must lie in [0, 1)")
        self._check(d["sweep"]["kind"] in SWEEPS, "sweep.kind", f"must be one of {tuple(SWEEPS)}")
        self._check(set(d["sweep"]["models"]) <= set(MODELS) and d["sweep"]["models"],
                    "sweep.models", f"must be a non-empty subset of {MODELS}")
        self._check(len(d["sweep"]["seeds"]) >= 1, "sweep.seeds", "needs at least one seed")
        for model, params in d["agent"].items():
            allowed = set(AGENTS[model]().get_params())
            for key in params:
                self._check(key in allowed, f"agent.{model}.{key}",
                            f"is not a {AGENTS[model].__name__} parameter")
                self._check(key not in _DERIVED_AGENT_KEYS, f"agent.{model}.{key}",
                            "is set from the top-level seed")
        # building the environment checks rates, sizes and capacities
        self.env_config()

    def _rates(self, key, n):
        value = self.data["env"][key]
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1 and n is not None:
            arr = np.full(n, arr[0])
        if n is not None and arr.size != n:
            raise ConfigError(f"config key 'env.{key}' lists {arr.size} rates for {n} nodes")
        return arr

    def env_config(self, model=None, seed=None):
        """The :class:`EnvConfig` for ``model`` (default: the configured one)."""
        e = self.data["env"]
        n = e["n_nodes"]
        try:
            if n is None:
                sizes = [np.size(e[k]) for k in ("lambda_data", "lambda_energy")]
                n = max(sizes)
            data = self._rates("lambda_data", n)
            energy = self._rates("lambda_energy", n)
            arrivals = ArrivalModel(tuple(data), tuple(energy), kind=e["arrivals"],
                                    empirical_data=_tuplify(e["empirical_data"]),
                                    empirical_energy=_tuplify(e["empirical_energy"]))
            return EnvConfig(n_nodes=int(n), arrivals=arrivals, d_max=e["d_max"],
                             e_max=float(e["e_max"]), mode=model or self.model,
                             seed=self.seed if seed is None else seed,
                             random_start=bool(e["random_start"]))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid 'env' section: {exc}") from None

    def agent_params(self, model=None):
        model = model or self.model
        return {k: _tuplify(v) for k, v in self.data["agent"][model].items()}

    def make_agent(self, model=None):
        """Unfitted estimator with the configured parameters, budget and seed."""
        model = model or self.model
        params = dict(n_episodes=self.data["train"]["n_episodes"],
                      episode_length=self.data["train"]["episode_length"])
        params.update(self.agent_params(model))
        return AGENTS[model](random_state=self.seed, **params)

    def eval_seeds(self):
        seeds = self.data["evaluate"]["seeds"]
        if seeds is None:
            return [10_000 + 1_000 * self.seed + k for k in range(5)]
        return [int(s) for s in seeds]

    def experiment_spec(self):
        s = self.data["sweep"]
        ev = self.data["evaluate"]
        return ExperimentSpec(
            base=self.env_config(),
            models=tuple(s["models"]),
            agent_params={m: self.agent_params(m) for m in MODELS},
            n_episodes=self.data["train"]["n_episodes"],
            episode_length=self.data["train"]["episode_length"],
            scale_budget=bool(s["scale_budget"]),
            horizon=ev["horizon"],
            burn_in=ev["burn_in"],
            eval_seeds_per_run=s["eval_seeds_per_run"],
            seeds=tuple(int(v) for v in s["seeds"]),
            grid=tuple(float(v) for v in s["grid"]),
            fixed_rate=float(s["fixed_rate"]),
            n_values=tuple(int(v) for v in s["n_values"]),
            rate_range=tuple(float(v) for v in s["rate_range"]),
            gamma=float(ev["gamma"]),
            workers=self.data["workers"],
        )

    def resolved(self):
        """Plain mapping with every agent parameter spelled out."""
        data = _plain(copy.deepcopy(self.data))
        for model in MODELS:
            params = AGENTS[model]().get_params()
            for key in ("n_episodes", "episode_length", "random_state"):
                params.pop(key)
            params.update(self.agent_params(model))
            data["agent"][model] = {k: _plain(v) for k, v in sorted(params.items())}
        return data

    def to_yaml(self):
        return yaml.safe_dump(self.resolved(), sort_keys=False, default_flow_style=False)

    def save(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_yaml())
