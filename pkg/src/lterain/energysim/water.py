"""Microwave attenuation in liquid water from a single-pole Debye model.

Temperature-dependent parameters follow Kaatze (1989), with T in Celsius:

* static permittivity  ``eps_s = 10 ** (1.94404 - 1.991e-3 T)``
* high-frequency limit ``eps_inf = 5.77 - 0.0274 T``
* relaxation time      ``tau = 3.745e-15 (1 + 7e-5 (T - 27.5)^2) exp(2295.7 / (T + 273.15))`` s

The field attenuation constant is ``alpha = (omega / c) |Im sqrt(eps)|`` and
the attenuation length, where the field falls to 1/e, is ``1 / alpha``.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .pathloss import SPEED_OF_LIGHT

FREQ_RANGE_GHZ = (0.1, 100.0)
TEMP_RANGE_C = (0.0, 60.0)


def _check(freq_ghz, temp_c) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(freq_ghz, dtype=float)
    t = np.asarray(temp_c, dtype=float)
    lo, hi = FREQ_RANGE_GHZ
    if np.any(~np.isfinite(f)) or np.any(f <= lo) or np.any(f > hi):
        raise DataError(f"frequency must lie in ({lo}, {hi}] GHz, got {freq_ghz}")
    lo, hi = TEMP_RANGE_C
    if np.any(~np.isfinite(t)) or np.any(t < lo) or np.any(t > hi):
        raise DataError(f"temperature must lie in [{lo}, {hi}] C, got {temp_c}")
    return f, t


def debye_parameters(temp_c) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(eps_s, eps_inf, tau_seconds)`` at the given temperature."""
    t = np.asarray(temp_c, dtype=float)
    eps_s = 10.0 ** (1.94404 - 1.991e-3 * t)
    eps_inf = 5.77 - 0.0274 * t
    tau = 3.745e-15 * (1.0 + 7e-5 * (t - 27.5) ** 2) * np.exp(2295.7 / (t + 273.15))
    return eps_s, eps_inf, tau


def water_permittivity(freq_ghz, temp_c) -> np.ndarray:
    """Complex relative permittivity ``eps' - j eps''``."""
    f, t = _check(freq_ghz, temp_c)
    eps_s, eps_inf, tau = debye_parameters(t)
    omega = 2.0 * np.pi * f * 1e9
    return eps_inf + (eps_s - eps_inf) / (1.0 + 1j * omega * tau)


def attenuation_constant(freq_ghz, temp_c) -> np.ndarray:
    """Field attenuation constant alpha in Np/m."""
    f, _ = _check(freq_ghz, temp_c)
    eps = water_permittivity(freq_ghz, temp_c)
    omega = 2.0 * np.pi * f * 1e9
    return omega / SPEED_OF_LIGHT * np.abs(np.sqrt(eps).imag)


def water_attenuation_length(freq_ghz, temp_c=25.0):
    """Depth in meters over which the field amplitude decays by 1/e."""
    out = 1.0 / attenuation_constant(freq_ghz, temp_c)
    return float(out) if np.ndim(out) == 0 else out
