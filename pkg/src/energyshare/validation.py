"""Input validation helpers shared by the environment, agents and harness."""

import numbers

import numpy as np
from sklearn.utils import check_random_state


def check_rng(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, a SeedSequence, an existing Generator, or a legacy
    RandomState (which is wrapped through its bit generator).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.RandomState):
        return np.random.Generator(seed._bit_generator)
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    # let sklearn raise its usual message for anything else
    return np.random.Generator(check_random_state(seed)._bit_generator)


def check_vector(values, length, name, *, dtype=float, nonnegative=True):
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim == 0:
        arr = np.full(length, arr, dtype=dtype)
    if arr.shape != (length,):
        raise ValueError(f"{name} must have shape ({length},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if nonnegative and np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
    return arr


def check_square(matrix, n, name="allocation"):
    arr = np.asarray(matrix, dtype=float)
    if arr.shape != (n, n):
        raise ValueError(f"{name} must have shape ({n}, {n}), got {arr.shape}")
    return arr


def check_positive(value, name, *, strict=True):
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return value
