"""3GPP TR 38.901 path loss for urban macro (UMa) and urban micro street canyon (UMi).

All distances are in meters and the carrier frequency in GHz, as in the
standard's tables. The expected loss mixes LOS and NLOS laws with the LOS
probability; shadow fading and rain are added as seeded draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError, DataError

SPEED_OF_LIGHT = 299792458.0
ENV_HEIGHT_M = 1.0  # effective environment height h_E for the breakpoint


class Scenario(str, Enum):
    UMA = "UMa"
    UMI = "UMi"


# shadow-fading standard deviations in dB (LOS, NLOS)
SHADOW_SIGMA_DB = {Scenario.UMA: (4.0, 6.0), Scenario.UMI: (4.0, 7.82)}


@dataclass(frozen=True)
class PathLossModel:
    scenario: Scenario
    h_bs: float
    h_ut: float = 1.5
    fc_ghz: float = 3.4
    shadow_fading: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if not self.h_bs > self.h_ut > ENV_HEIGHT_M:
            raise ConfigError(
                f"need h_bs > h_ut > {ENV_HEIGHT_M} m, got h_bs={self.h_bs}, h_ut={self.h_ut}"
            )
        if not self.fc_ghz > 0:
            raise ConfigError(f"carrier frequency must be positive, got {self.fc_ghz} GHz")

    @property
    def breakpoint_m(self) -> float:
        """``d'_BP = 4 h'_BS h'_UT f_c / c`` with heights above ``h_E``."""
        return (4.0 * (self.h_bs - ENV_HEIGHT_M) * (self.h_ut - ENV_HEIGHT_M)
                * self.fc_ghz * 1e9 / SPEED_OF_LIGHT)


def _check_d2d(d2d) -> np.ndarray:
    d = np.asarray(d2d, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        bad = d[~(np.isfinite(d) & (d > 0))].ravel()[0]
        raise DataError(f"path loss needs a positive finite 2D distance, got {bad} m")
    return d


def los_probability(model: PathLossModel, d2d) -> np.ndarray:
    """Outdoor LOS probability; 1 up to 18 m, then ``18/d + exp(-d/d1)(1 - 18/d)``."""
    d = _check_d2d(d2d)
    d1 = 63.0 if model.scenario is Scenario.UMA else 36.0
    far = 18.0 / np.maximum(d, 18.0)
    p = far + np.exp(-d / d1) * (1.0 - far)
    return np.where(d <= 18.0, 1.0, p)


def _d3d(model: PathLossModel, d: np.ndarray) -> np.ndarray:
    return np.hypot(d, model.h_bs - model.h_ut)


def pl_los(model: PathLossModel, d2d) -> np.ndarray:
    d = _check_d2d(d2d)
    d3 = _d3d(model, d)
    lf = np.log10(model.fc_ghz)
    dh2 = model.breakpoint_m ** 2 + (model.h_bs - model.h_ut) ** 2
    if model.scenario is Scenario.UMA:
        near = 28.0 + 22.0 * np.log10(d3) + 20.0 * lf
        far = 28.0 + 40.0 * np.log10(d3) + 20.0 * lf - 9.0 * np.log10(dh2)
    else:
        near = 32.4 + 21.0 * np.log10(d3) + 20.0 * lf
        far = 32.4 + 40.0 * np.log10(d3) + 20.0 * lf - 9.5 * np.log10(dh2)
    return np.where(d <= model.breakpoint_m, near, far)


def pl_nlos(model: PathLossModel, d2d) -> np.ndarray:
    """NLOS loss, never below the LOS loss at the same distance."""
    d = _check_d2d(d2d)
    d3 = _d3d(model, d)
    lf = np.log10(model.fc_ghz)
    if model.scenario is Scenario.UMA:
        raw = 13.54 + 39.08 * np.log10(d3) + 20.0 * lf - 0.6 * (model.h_ut - 1.5)
    else:
        raw = 35.3 * np.log10(d3) + 22.4 + 21.3 * lf - 0.3 * (model.h_ut - 1.5)
    return np.maximum(raw, pl_los(model, d))


def expected_path_loss(model: PathLossModel, d2d) -> np.ndarray:
    """``Pr_los * PL_los + (1 - Pr_los) * PL_nlos`` without any random term."""
    p = los_probability(model, d2d)
    return p * pl_los(model, d2d) + (1.0 - p) * pl_nlos(model, d2d)


def shadow_sigma_db(model: PathLossModel, d2d) -> np.ndarray:
    """Standard deviation of the LOS/NLOS shadow-fading mixture."""
    p = los_probability(model, d2d)
    s_los, s_nlos = SHADOW_SIGMA_DB[model.scenario]
    return np.sqrt(p * s_los ** 2 + (1.0 - p) * s_nlos ** 2)


def path_loss_db(model: PathLossModel, d2d, shadow_z=None, rain_db=None) -> np.ndarray:
    """Expected loss plus scaled shadow-fading draws plus rain attenuation.

    ``shadow_z`` holds standard-normal draws broadcastable to ``d2d``; they
    are scaled by :func:`shadow_sigma_db` when the model enables fading.
    ``rain_db`` is added as is.
    """
    pl = expected_path_loss(model, d2d)
    if model.shadow_fading and shadow_z is not None:
        pl = pl + shadow_sigma_db(model, d2d) * np.asarray(shadow_z, dtype=float)
    if rain_db is not None:
        pl = pl + np.asarray(rain_db, dtype=float)
    return pl
