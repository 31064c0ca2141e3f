"""Saving and restoring trained controllers.

A checkpoint is a directory holding ``manifest.txt`` (one ``key = value``
line per entry, values in JSON) plus one text file per learned array: the
network dumps of :mod:`energyshare.neural` for the deep agents, or the Q-table
and visit counts for the tabular agent. Optimizer moments are not stored, so
a restored agent acts exactly like the saved one but does not resume training.
"""

import json
import os

import numpy as np

from . import neural
from .agents import AGENTS, DdpgAgent, DqnAgent, TabularQAgent
from .env import EnvConfig

MANIFEST = "manifest.txt"
FORMAT = "energyshare-agent 1"

# learned scalars restored next to the arrays
_STATE_KEYS = {
    DdpgAgent: ("best_score_", "n_target_updates_", "n_train_steps_"),
    DqnAgent: ("epsilon_", "n_updates_", "n_train_steps_"),
    TabularQAgent: ("epsilon_", "n_train_steps_"),
}


class CheckpointMismatchError(ValueError):
    """The checkpoint was trained for a differently shaped network."""


def _kind(agent):
    for kind, cls in AGENTS.items():
        if type(agent) is cls:
            return kind
    raise TypeError(f"cannot checkpoint {type(agent).__name__}")


def _json(value):
    if isinstance(value, tuple):
        value = list(value)
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return json.dumps(repr(value))
    return json.dumps(value)


def _unjson(text):
    value = json.loads(text)
    if isinstance(value, list):
        return tuple(value)
    if value in ("inf", "-inf", "nan"):
        return float(value)
    return value


def _save_array(path, arr):
    arr = np.asarray(arr)
    fmt = "%d" if arr.dtype.kind in "iu" else "%.17g"
    header = " ".join(str(d) for d in arr.shape)
    np.savetxt(path, arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[None, :],
               fmt=fmt, header=header, comments="# ")


def _load_array(path, dtype):
    with open(path) as fh:
        shape = tuple(int(v) for v in fh.readline().lstrip("# ").split())
    return np.loadtxt(path, dtype=dtype, ndmin=2).reshape(shape)


def save_agent(agent, directory):
    """Write ``agent`` (fitted or set up) into ``directory``, creating it if needed."""
    kind = _kind(agent)
    os.makedirs(directory, exist_ok=True)
    cfg = agent.config_
    params = {k: v for k, v in agent.get_params().items() if k != "random_state"}
    lines = [f"format = {_json(FORMAT)}", f"kind = {_json(kind)}",
             f"n_nodes = {cfg.n_nodes}", f"d_max = {cfg.d_max}", f"e_max = {_json(cfg.e_max)}",
             f"episodes_trained = {len(agent.training_log_)}"]
    lines += [f"param.{k} = {_json(v)}" for k, v in sorted(params.items())]
    lines += [f"state.{k} = {_json(getattr(agent, k))}" for k in _STATE_KEYS[type(agent)]]
    if isinstance(agent, TabularQAgent):
        _save_array(os.path.join(directory, "q_table.txt"), agent.q_table_)
        _save_array(os.path.join(directory, "visits.txt"), agent.visits_)
    else:
        if isinstance(agent, DdpgAgent):
            lines.append(f"state.noise_sigma = {_json(agent.noise_.sigma)}")
        for name, net in agent.networks().items():
            neural.save(net, os.path.join(directory, f"{name}.txt"))
    with open(os.path.join(directory, MANIFEST), "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint manifest at {path}")
    entries = {}
    with open(path) as fh:
        for number, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{number}: expected 'key = value'")
            entries[key.strip()] = _unjson(value.strip())
    if entries.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT!r} manifest")
    return entries


def load_agent(directory, config=None):
    """Restore an agent from ``directory``.

    With ``config`` the checkpoint must match its network shape (node count,
    buffer sizes and mode); the restored agent is set up for ``config``.
    """
    m = read_manifest(directory)
    kind = m["kind"]
    n = int(m["n_nodes"])
    if config is None:
        config = EnvConfig.from_rates([0.0] * n, [0.0] * n, d_max=int(m["d_max"]),
                                      e_max=float(m["e_max"]), mode=kind)
    cls = AGENTS[kind]
    if config.mode != kind:
        raise CheckpointMismatchError(
            f"checkpoint holds a {kind!r} controller, the config asks for {config.mode!r}")
    if config.n_nodes != n or config.d_max != int(m["d_max"]) or config.e_max != float(m["e_max"]):
        saved_dim = n + (1 if kind == "centralized" else n)
        raise CheckpointMismatchError(
            f"checkpoint was trained for {n} nodes (state dim {saved_dim}, d_max={m['d_max']}, "
            f"e_max={m['e_max']}); config has {config.n_nodes} nodes (state dim "
            f"{config.state_dim}, d_max={config.d_max}, e_max={config.e_max})")
    params = {k[len("param."):]: v for k, v in m.items() if k.startswith("param.")}
    agent = cls(**params).setup(config, 0)

    if isinstance(agent, TabularQAgent):
        q = _load_array(os.path.join(directory, "q_table.txt"), float)
        if q.shape != agent.q_table_.shape:
            raise CheckpointMismatchError(
                f"Q-table has shape {q.shape}, expected {agent.q_table_.shape}")
        agent.q_table_[:] = q
        agent.visits_[:] = _load_array(os.path.join(directory, "visits.txt"), np.int64)
    else:
        for name, net in agent.networks().items():
            saved = neural.load(os.path.join(directory, f"{name}.txt"))
            if saved.sizes != net.sizes:
                raise CheckpointMismatchError(
                    f"{name} network has layer sizes {saved.sizes}, "
                    f"a {n}-node {kind} controller needs {net.sizes}")
            net.flat[:] = saved.flat
        if isinstance(agent, DdpgAgent):
            agent.noise_.sigma = float(m["state.noise_sigma"])
    for key in _STATE_KEYS[cls]:
        setattr(agent, key, m[f"state.{key}"])
    return agent
