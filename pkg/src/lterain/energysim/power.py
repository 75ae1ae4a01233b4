"""Coverage-constrained minimum transmit power for one macro and several micro stations.

Every user needs received power ``P_s - PL_su >= R`` from at least one
station, so station ``s`` covers user ``u`` once ``P_s >= R + PL_su``. The
total to minimize is the sum of station powers in watts. Two solvers are
provided:

* ``exact`` (default): a 0/1 program over the candidate power levels of each
  station (the requirements of the users it can reach), solved with HiGHS.
  Levels are cumulative, ``y[s, l] <= y[s, l-1]``, so the cost of a station is
  a telescoping sum of watt increments.
* ``greedy``: each user picks the station needing the least power; a station
  transmits the maximum requirement of its users. Cheaper, not always optimal.

Watts and dBm are related by ``W = 10 ** ((dBm - 30) / 10)``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

from ..errors import ConfigError, DataError, InfeasibleError
from .pathloss import PathLossModel, Scenario, path_loss_db

logger = logging.getLogger(__name__)

SOLVERS = ("exact", "greedy")


def dbm_to_watts(dbm) -> np.ndarray:
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(w) -> np.ndarray:
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


@dataclass
class EnergyScenario:
    area_km: float = 1.0
    n_micro: int = 20
    n_users: int = 200
    fc_ghz: float = 3.4
    h_ut: float = 1.5
    h_macro: float = 25.0
    h_micro: float = 10.0
    threshold_dbm: float = -110.0
    macro_cap_dbm: float = 53.0
    micro_cap_dbm: float = 38.0
    rain_mean_db: float = 9.0
    rain_std_db: float = 1.0
    shadow_fading: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.area_km > 0:
            raise ConfigError("area_km must be positive")
        if self.n_micro < 0 or self.n_users < 1:
            raise ConfigError("need n_micro >= 0 and n_users >= 1")
        if self.rain_std_db < 0:
            raise ConfigError("rain_std_db must be non-negative")
        # the models validate heights and frequency
        self.models()

    def models(self) -> tuple[PathLossModel, PathLossModel]:
        return (
            PathLossModel(Scenario.UMA, self.h_macro, self.h_ut, self.fc_ghz, self.shadow_fading),
            PathLossModel(Scenario.UMI, self.h_micro, self.h_ut, self.fc_ghz, self.shadow_fading),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyScenario":
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown energy scenario keys: {extra}")
        return cls(**d)


@dataclass
class Layout:
    """Positions in meters; station 0 is the macro at the center."""

    stations_xy: np.ndarray
    users_xy: np.ndarray
    is_macro: np.ndarray
    distance_m: np.ndarray  # (stations, users) 2D distances
    shadow_z: np.ndarray  # (stations, users) standard-normal draws
    rain_db: np.ndarray  # (stations,) rain attenuation draws

    @property
    def n_stations(self) -> int:
        return len(self.stations_xy)


def build_layout(sc: EnergyScenario) -> Layout:
    """Draw positions, shadow fading and rain from independent seeded substreams."""
    pos_ss, shadow_ss, rain_ss = np.random.SeedSequence(sc.seed).spawn(3)
    side = sc.area_km * 1000.0
    pos_rng = np.random.default_rng(pos_ss)
    micro = pos_rng.uniform(0.0, side, size=(sc.n_micro, 2))
    users = pos_rng.uniform(0.0, side, size=(sc.n_users, 2))
    stations = np.vstack([[side / 2.0, side / 2.0], micro])
    dist = np.linalg.norm(stations[:, None, :] - users[None, :, :], axis=2)
    # a user exactly on a station would have an undefined loss; nudge to 1 cm
    dist = np.maximum(dist, 0.01)
    shadow = np.random.default_rng(shadow_ss).standard_normal(dist.shape)
    # attenuation cannot be negative, so the Gaussian draw is floored at zero
    rain = np.maximum(np.random.default_rng(rain_ss).normal(sc.rain_mean_db, sc.rain_std_db, len(stations)), 0.0)
    is_macro = np.zeros(len(stations), dtype=bool)
    is_macro[0] = True
    return Layout(stations, users, is_macro, dist, shadow, rain)


def path_loss_matrix(sc: EnergyScenario, layout: Layout, rain: bool) -> np.ndarray:
    """Loss in dB for every (station, user) pair in one weather scenario."""
    macro, micro = sc.models()
    out = np.empty_like(layout.distance_m)
    for mask, model in ((layout.is_macro, macro), (~layout.is_macro, micro)):
        if mask.any():
            out[mask] = path_loss_db(
                model, layout.distance_m[mask], layout.shadow_z[mask],
                layout.rain_db[mask, None] if rain else None,
            )
    return out


def station_caps(sc: EnergyScenario, layout: Layout) -> np.ndarray:
    return np.where(layout.is_macro, sc.macro_cap_dbm, sc.micro_cap_dbm)


@dataclass
class Allocation:
    """Transmit power per station (``-inf`` dBm when off) and the serving station per user."""

    power_dbm: np.ndarray
    serving: np.ndarray
    required_dbm: np.ndarray = field(repr=False)

    @property
    def active(self) -> np.ndarray:
        return np.isfinite(self.power_dbm)

    @property
    def power_w(self) -> np.ndarray:
        return np.where(self.active, dbm_to_watts(np.where(self.active, self.power_dbm, 0.0)), 0.0)

    @property
    def total_w(self) -> float:
        return float(self.power_w.sum())

    def covered(self, required_dbm: np.ndarray | None = None) -> np.ndarray:
        """Per user: does any station transmit at least the requirement?"""
        req = self.required_dbm if required_dbm is None else required_dbm
        return np.any(self.power_dbm[:, None] >= req - 1e-9, axis=0)


def _check_inputs(required_dbm, caps_dbm) -> tuple[np.ndarray, np.ndarray]:
    req = np.asarray(required_dbm, dtype=float)
    caps = np.asarray(caps_dbm, dtype=float)
    if req.ndim != 2 or caps.shape != (req.shape[0],):
        raise DataError(f"requirements {req.shape} and caps {caps.shape} disagree")
    if not np.all(np.isfinite(req)):
        raise DataError("requirements must be finite")
    reach = req <= caps[:, None]
    orphan = np.flatnonzero(~reach.any(axis=0))
    if len(orphan):
        raise InfeasibleError(
            f"{len(orphan)} user(s) cannot be covered by any station at maximum power: "
            f"{orphan.tolist()}"
        )
    return req, caps


def _serving(power: np.ndarray, req: np.ndarray) -> np.ndarray:
    # among stations that cover the user, the one with the lowest requirement
    ok = power[:, None] >= req - 1e-9
    return np.argmin(np.where(ok, req, np.inf), axis=0)


def allocate_greedy(required_dbm, caps_dbm) -> Allocation:
    """Each user joins the reachable station with the smallest requirement (ties: lowest index)."""
    req, caps = _check_inputs(required_dbm, caps_dbm)
    masked = np.where(req <= caps[:, None], req, np.inf)
    choice = np.argmin(masked, axis=0)
    power = np.full(req.shape[0], -np.inf)
    np.maximum.at(power, choice, req[choice, np.arange(req.shape[1])])
    return Allocation(power, choice, req)


def allocate_exact(required_dbm, caps_dbm) -> Allocation:
    """Minimum total watts over all coverage-feasible power settings."""
    req, caps = _check_inputs(required_dbm, caps_dbm)
    n_s, n_u = req.shape
    # candidate levels per station, and the level index each user needs
    levels, var_of = [], np.full((n_s, n_u), -1, dtype=np.int64)
    cost, chain_rows, chain_cols, chain_vals = [], [], [], []
    offset = 0
    for s in range(n_s):
        reach = req[s] <= caps[s]
        lv = np.unique(req[s, reach])
        levels.append(lv)
        var_of[s, reach] = offset + np.searchsorted(lv, req[s, reach])
        # milliwatts keep the solver's absolute gap far below any real difference
        mw = 10.0 ** (lv / 10.0)
        cost.append(np.diff(mw, prepend=0.0))
        for j in range(1, len(lv)):
            row = len(chain_rows) // 2
            chain_rows += [row, row]
            chain_cols += [offset + j, offset + j - 1]
            chain_vals += [1.0, -1.0]
        offset += len(lv)
    c = np.concatenate(cost)
    cons = []
    n_chain = len(chain_rows) // 2
    if n_chain:
        a_chain = coo_matrix((chain_vals, (chain_rows, chain_cols)), shape=(n_chain, offset))
        cons.append(LinearConstraint(a_chain, -np.inf, 0.0))
    users, stations = np.nonzero(var_of.T >= 0)
    a_cover = coo_matrix((np.ones(len(users)), (users, var_of[stations, users])), shape=(n_u, offset))
    cons.append(LinearConstraint(a_cover, 1.0, np.inf))
    res = milp(c, constraints=cons, integrality=np.ones(offset), bounds=Bounds(0, 1),
               options={"mip_rel_gap": 0.0})
    if res.status != 0 or res.x is None:
        raise InfeasibleError(f"power allocation solver failed: {res.message}")
    y = np.round(res.x).astype(bool)
    power = np.full(n_s, -np.inf)
    start = 0
    for s, lv in enumerate(levels):
        on = np.flatnonzero(y[start:start + len(lv)])
        if len(on):
            power[s] = lv[on.max()]
        start += len(lv)
    alloc = Allocation(power, _serving(power, req), req)
    if not alloc.covered().all():
        raise InfeasibleError("solver returned an allocation that leaves users uncovered")
    return alloc


def allocate(required_dbm, caps_dbm, solver: str = "exact") -> Allocation:
    if solver == "exact":
        return allocate_exact(required_dbm, caps_dbm)
    if solver == "greedy":
        return allocate_greedy(required_dbm, caps_dbm)
    raise ConfigError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def required_power(sc: EnergyScenario, layout: Layout, rain: bool) -> np.ndarray:
    return sc.threshold_dbm + path_loss_matrix(sc, layout, rain)


def min_power_single(sc: EnergyScenario, rain: bool, solver: str = "exact",
                     layout: Layout | None = None) -> Allocation:
    """Cheapest allocation covering every user in one weather scenario."""
    layout = build_layout(sc) if layout is None else layout
    return allocate(required_power(sc, layout, rain), station_caps(sc, layout), solver)


def min_power_robust(sc: EnergyScenario, solver: str = "exact", layout: Layout | None = None) -> Allocation:
    """Cheapest allocation that covers every user with and without rain."""
    layout = build_layout(sc) if layout is None else layout
    req = np.maximum(required_power(sc, layout, True), required_power(sc, layout, False))
    return allocate(req, station_caps(sc, layout), solver)


@dataclass
class EnergyTotals:
    rain_w: float  # P^{c1}: allocation tuned for rain
    dry_w: float  # P^{c2}: allocation tuned for no rain
    robust_w: float  # P_wo: one allocation for both

    def expected(self, pr_rain: float) -> tuple[float, float, float]:
        """``(P_w, P_wo, savings)`` for a rain probability; affine in ``pr_rain``."""
        if not 0.0 <= pr_rain <= 1.0:
            raise DataError(f"rain probability must lie in [0, 1], got {pr_rain}")
        p_w = self.rain_w * pr_rain + self.dry_w * (1.0 - pr_rain)
        return p_w, self.robust_w, (self.robust_w - p_w) / self.robust_w


def energy_totals(sc: EnergyScenario, solver: str = "exact") -> EnergyTotals:
    layout = build_layout(sc)
    return EnergyTotals(
        min_power_single(sc, True, solver, layout).total_w,
        min_power_single(sc, False, solver, layout).total_w,
        min_power_robust(sc, solver, layout).total_w,
    )


def expected_energy(sc: EnergyScenario, pr_rain: float, solver: str = "exact") -> tuple[float, float, float]:
    """Expected power with rain-aware switching versus the robust allocation."""
    return energy_totals(sc, solver).expected(pr_rain)
