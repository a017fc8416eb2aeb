import time

import numpy as np

from hecsb.errors import ArgumentError, DimensionError


def now_ms():
    return time.perf_counter() * 1000.0


def check_positive(value, name):
    if value is None or not value > 0:
        raise ArgumentError(f'{name} must be > 0, got {value}')


def check_non_negative(value, name):
    if value is None or value < 0:
        raise ArgumentError(f'{name} must be >= 0, got {value}')


def check_unit_interval(value, name):
    if value is None or not 0.0 <= value <= 1.0:
        raise ArgumentError(f'{name} must be in [0, 1], got {value}')


def check_same_shape(a, b, a_name, b_name):
    if np.shape(a) != np.shape(b):
        raise DimensionError(f'{a_name} has shape {np.shape(a)} but'
                             f' {b_name} has shape {np.shape(b)}')


def check_last_dim(x, expected, name):
    if np.ndim(x) == 0 or np.shape(x)[-1] != expected:
        raise DimensionError(f'{name} must end in dimension {expected},'
                             f' got shape {np.shape(x)}')


def make_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, count):
    """Independent child seeds, stable for a given (seed, count)."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def batches(count, batch_size, rng=None):
    order = np.arange(count) if rng is None else rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]
