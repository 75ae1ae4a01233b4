"""Rain-aware base-station power case study and water attenuation."""

from .pathloss import (
    PathLossModel,
    Scenario,
    expected_path_loss,
    los_probability,
    path_loss_db,
    pl_los,
    pl_nlos,
    shadow_sigma_db,
)
from .power import (
    Allocation,
    EnergyScenario,
    EnergyTotals,
    Layout,
    allocate,
    allocate_exact,
    allocate_greedy,
    build_layout,
    dbm_to_watts,
    energy_totals,
    expected_energy,
    min_power_robust,
    min_power_single,
    path_loss_matrix,
    watts_to_dbm,
)
from .water import water_attenuation_length, water_permittivity

__all__ = [
    "Allocation", "EnergyScenario", "EnergyTotals", "Layout", "PathLossModel", "Scenario",
    "allocate", "allocate_exact", "allocate_greedy", "build_layout", "dbm_to_watts",
    "energy_totals", "expected_energy", "expected_path_loss", "los_probability",
    "min_power_robust", "min_power_single", "path_loss_db", "path_loss_matrix", "pl_los",
    "pl_nlos", "shadow_sigma_db", "water_attenuation_length", "water_permittivity", "watts_to_dbm",
]
