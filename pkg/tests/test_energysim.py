import math

import numpy as np
import pytest
from oracles import brute_force_min_power

from lterain.energysim import (
    EnergyScenario,
    PathLossModel,
    Scenario,
    allocate,
    allocate_exact,
    allocate_greedy,
    build_layout,
    dbm_to_watts,
    energy_totals,
    expected_path_loss,
    los_probability,
    min_power_robust,
    min_power_single,
    path_loss_db,
    path_loss_matrix,
    pl_los,
    pl_nlos,
    shadow_sigma_db,
    water_attenuation_length,
    water_permittivity,
    watts_to_dbm,
)
from lterain.energysim.power import required_power, station_caps
from lterain.errors import ConfigError, DataError, InfeasibleError

UMA = PathLossModel(Scenario.UMA, 25.0)
UMI = PathLossModel(Scenario.UMI, 10.0)
SMALL = dict(n_micro=6, n_users=40)


class TestPathLoss:
    def test_uma_los_by_hand(self):
        d3 = math.hypot(100.0, 23.5)
        expect = 28.0 + 22.0 * math.log10(d3) + 20.0 * math.log10(3.4)
        assert abs(float(pl_los(UMA, 100.0)) - expect) < 1e-12

    def test_umi_nlos_by_hand(self):
        d3 = math.hypot(300.0, 8.5)
        expect = 35.3 * math.log10(d3) + 22.4 + 21.3 * math.log10(3.4)
        assert abs(float(pl_nlos(UMI, 300.0)) - expect) < 1e-12

    @pytest.mark.parametrize("model", [UMA, UMI])
    def test_continuous_at_breakpoint(self, model):
        bp = model.breakpoint_m
        assert abs(float(pl_los(model, bp * (1 - 1e-12)) - pl_los(model, bp * (1 + 1e-12)))) < 1e-8

    @pytest.mark.parametrize("model", [UMA, UMI])
    def test_monotone_in_distance(self, model):
        d = np.linspace(1.0, 2000.0, 20000)
        assert np.all(np.diff(expected_path_loss(model, d)) > 0)
        assert np.all(pl_nlos(model, d) >= pl_los(model, d))

    @pytest.mark.parametrize("model", [UMA, UMI])
    def test_los_probability(self, model):
        assert float(los_probability(model, 5.0)) == 1.0
        assert float(los_probability(model, 18.0)) == 1.0
        p = los_probability(model, np.linspace(18.0, 3000.0, 500))
        assert np.all(np.diff(p) <= 0) and np.all((p > 0) & (p <= 1))

    def test_shadow_sigma_limits(self):
        assert float(shadow_sigma_db(UMI, 10.0)) == 4.0
        assert abs(float(shadow_sigma_db(UMI, 1e6)) - 7.82) < 1e-3

    def test_rain_adds_exactly(self):
        d = np.array([50.0, 400.0])
        z = np.array([0.3, -1.2])
        dry = path_loss_db(UMA, d, z)
        wet = path_loss_db(UMA, d, z, rain_db=9.3)
        assert np.allclose(wet - dry, 9.3, atol=1e-12)

    def test_fading_off_ignores_draws(self):
        m = PathLossModel(Scenario.UMA, 25.0, shadow_fading=False)
        assert np.array_equal(path_loss_db(m, [80.0], [2.0]), expected_path_loss(m, [80.0]))

    @pytest.mark.parametrize("d", [0.0, -3.0, np.nan])
    def test_bad_distance(self, d):
        with pytest.raises(DataError):
            pl_los(UMA, d)

    def test_bad_heights(self):
        with pytest.raises(ConfigError):
            PathLossModel(Scenario.UMI, 1.2)


class TestLayout:
    def test_deterministic_and_seeded(self):
        sc = EnergyScenario(**SMALL)
        a, b = build_layout(sc), build_layout(sc)
        assert np.array_equal(a.distance_m, b.distance_m) and np.array_equal(a.rain_db, b.rain_db)
        c = build_layout(EnergyScenario(**SMALL, seed=1))
        assert not np.array_equal(a.users_xy, c.users_xy)

    def test_macro_at_center(self):
        lay = build_layout(EnergyScenario(**SMALL))
        assert lay.is_macro.tolist() == [True] + [False] * 6
        assert np.array_equal(lay.stations_xy[0], [500.0, 500.0])
        assert lay.shadow_z.shape == (7, 40) and np.all(lay.rain_db >= 0)

    def test_rain_toggle_adds_station_draw(self):
        sc = EnergyScenario(**SMALL)
        lay = build_layout(sc)
        diff = path_loss_matrix(sc, lay, True) - path_loss_matrix(sc, lay, False)
        assert np.allclose(diff, lay.rain_db[:, None], atol=1e-12)

    def test_config_round_trip(self):
        sc = EnergyScenario(n_users=7, seed=4)
        assert EnergyScenario.from_dict(sc.to_dict()) == sc
        with pytest.raises(ConfigError):
            EnergyScenario.from_dict({"users": 3})


class TestAllocation:
    def test_unit_conversions(self):
        assert float(dbm_to_watts(30.0)) == 1.0
        assert abs(float(watts_to_dbm(dbm_to_watts(17.3))) - 17.3) < 1e-12

    def test_single_station_single_user(self):
        sc = EnergyScenario(n_micro=0, n_users=1)
        lay = build_layout(sc)
        alloc = min_power_single(sc, False, layout=lay)
        pl = float(path_loss_matrix(sc, lay, False)[0, 0])
        assert alloc.power_dbm[0] == sc.threshold_dbm + pl
        assert abs(alloc.total_w - float(dbm_to_watts(sc.threshold_dbm + pl))) < 1e-15

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force_random(self, seed):
        rng = np.random.default_rng(seed)
        req = rng.uniform(0.0, 40.0, size=(3, 5))
        caps = np.array([45.0, 30.0, 30.0])
        req[1:, rng.integers(5)] = 50.0  # one user only the first station can reach
        exact = allocate_exact(req, caps)
        assert abs(exact.total_w - brute_force_min_power(req, caps)) <= 1e-12 * exact.total_w
        assert exact.covered().all()

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force_scenario(self, seed):
        sc = EnergyScenario(n_micro=2, n_users=5, seed=seed)
        lay = build_layout(sc)
        for rain in (False, True):
            req = required_power(sc, lay, rain)
            caps = station_caps(sc, lay)
            got = allocate_exact(req, caps).total_w
            assert abs(got - brute_force_min_power(req, caps)) <= 1e-12 * got

    def test_greedy_never_beats_exact(self):
        for seed in range(3):
            sc = EnergyScenario(**SMALL, seed=seed)
            lay = build_layout(sc)
            req, caps = required_power(sc, lay, False), station_caps(sc, lay)
            greedy = allocate_greedy(req, caps)
            assert greedy.covered().all()
            assert allocate_exact(req, caps).total_w <= greedy.total_w * (1 + 1e-12)

    def test_coverage_and_serving(self):
        sc = EnergyScenario(**SMALL)
        alloc = min_power_single(sc, True)
        req = alloc.required_dbm
        served = req[alloc.serving, np.arange(req.shape[1])]
        assert np.all(alloc.power_dbm[alloc.serving] >= served - 1e-9)
        assert np.all(alloc.power_dbm[alloc.active] <= station_caps(sc, build_layout(sc))[alloc.active])

    def test_infeasible(self):
        req = np.array([[10.0, 60.0], [12.0, 70.0]])
        with pytest.raises(InfeasibleError, match=r"\[1\]"):
            allocate(req, np.array([50.0, 50.0]))

    def test_unknown_solver(self):
        with pytest.raises(ConfigError):
            allocate(np.zeros((1, 1)), np.ones(1), "annealing")


class TestEnergyTotals:
    @pytest.mark.parametrize("seed", range(3))
    def test_dominance(self, seed):
        sc = EnergyScenario(**SMALL, seed=seed)
        t = energy_totals(sc)
        assert t.dry_w <= t.rain_w * (1 + 1e-12)
        assert t.rain_w <= t.robust_w * (1 + 1e-12) and t.dry_w <= t.robust_w * (1 + 1e-12)
        robust = min_power_robust(sc)
        lay = build_layout(sc)
        for rain in (False, True):
            assert robust.covered(required_power(sc, lay, rain)).all()

    def test_zero_rain_collapses(self):
        sc = EnergyScenario(**SMALL, rain_mean_db=0.0, rain_std_db=0.0)
        t = energy_totals(sc)
        assert t.rain_w == t.dry_w == t.robust_w
        assert t.expected(0.3)[2] == 0.0

    def test_affine_and_monotone(self):
        t = energy_totals(EnergyScenario(**SMALL))
        prs = np.linspace(0.0, 1.0, 11)
        p_w = np.array([t.expected(p)[0] for p in prs])
        savings = np.array([t.expected(p)[2] for p in prs])
        for i, j, k in [(0, 5, 10), (1, 4, 9), (2, 3, 7)]:
            lhs = (p_w[j] - p_w[i]) * (prs[k] - prs[i])
            rhs = (p_w[k] - p_w[i]) * (prs[j] - prs[i])
            assert abs(lhs - rhs) <= 1e-9 * abs(rhs)
        assert np.all(np.diff(savings) <= 0)
        with pytest.raises(DataError):
            t.expected(1.5)


class TestWater:
    def test_static_limit(self):
        eps = water_permittivity(0.1 + 1e-9, 25.0)
        assert abs(eps.real - 78.4) < 0.5

    def test_x_band_values(self):
        eps = water_permittivity(10.0, 25.0)
        assert 55 < eps.real < 70 and -35 < eps.imag < -25

    def test_ratio_1_to_5_ghz(self):
        assert water_attenuation_length(1.0) / water_attenuation_length(5.0) > 10

    def test_strictly_decreasing(self):
        f = np.linspace(0.5, 10.0, 2000)
        for t in (0.0, 25.0, 60.0):
            assert np.all(np.diff(water_attenuation_length(f, t)) < 0)

    def test_scalar_return(self):
        assert isinstance(water_attenuation_length(2.4), float)

    @pytest.mark.parametrize("f,t", [(0.05, 25.0), (200.0, 25.0), (1.0, -5.0), (1.0, 80.0)])
    def test_range_errors(self, f, t):
        with pytest.raises(DataError):
            water_attenuation_length(f, t)
