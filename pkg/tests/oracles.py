"""Independent reference implementations used by the tests."""

import itertools
import math

import numpy as np

from lterain.rainnet import RainNetModel, cross_entropy, forward_batch


def finite_difference_grads(model: RainNetModel, batch, step: float = 1e-5) -> dict:
    """Central differences of the mean cross-entropy, one parameter entry at a time."""
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = cross_entropy(forward_batch(model, batch), batch.y)
            flat[i] = old - step
            down = cross_entropy(forward_batch(model, batch), batch.y)
            flat[i] = old
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-6) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst


def brute_force_min_power(required_dbm: np.ndarray, caps_dbm: np.ndarray) -> float:
    """Cheapest station-assignment by enumerating every user -> station map.

    A station's power is the largest requirement among its users; total in watts.
    """
    s, u = required_dbm.shape
    best = math.inf
    for assign in itertools.product(range(s), repeat=u):
        level = np.full(s, -np.inf)
        for user, st in enumerate(assign):
            level[st] = max(level[st], required_dbm[st, user])
        if np.any(level > caps_dbm):
            continue
        on = np.isfinite(level)
        best = min(best, float(np.sum(10 ** ((level[on] - 30) / 10))))
    return best

