import numpy as np
import pytest

from lterain.errors import ConfigError, DataError, MissingInputError
from lterain.geodata import GeoPoint, bin_labels, interpolate_rain_many
from lterain.ingest import (
    CSV_COLUMNS,
    LteRecord,
    LteTable,
    Operator,
    Rat,
    SynthConfig,
    parse_lte_csv,
    read_truth_csv,
    round_half_away,
    station_positions,
    synthesize_dataset,
    synthesize_radar,
    write_lte_csv,
    write_truth_csv,
)


def _record(**kw):
    base = dict(id=1, loc=GeoPoint(40.5, 116.0), rat=Rat.LTE4G, operator=Operator.MOBILE,
                rsrp=-100, sinr=10, rssi=-72, outdoor=True, timestamp=1664755200)
    base.update(kw)
    return LteRecord(**base)


def _write_rows(path, rows):
    lines = [",".join(CSV_COLUMNS)] + rows
    path.write_text("\n".join(lines) + "\n")


GOOD_ROW = "1,2022-10-03T00:00:05Z,40.5,116.0,LTE4G,MOBILE,-100,10,-72,1"


class TestRecordValidation:
    def test_valid_record(self):
        r = _record()
        assert r.rsrp == -100 and r.outdoor

    @pytest.mark.parametrize("kw", [dict(rsrp=-157), dict(rsrp=-30, rssi=0), dict(sinr=-24),
                                    dict(sinr=41), dict(rssi=-101)])
    def test_out_of_range_metrics_rejected(self, kw):
        with pytest.raises(DataError):
            _record(**kw)

    def test_bad_coordinates_rejected(self):
        with pytest.raises(ValueError):
            _record(loc=GeoPoint(95.0, 0.0))

    def test_table_rejects_ragged_columns(self):
        t = LteTable.from_records([_record()])
        with pytest.raises(DataError):
            LteTable(ids=[1, 2], lat=t.lat, lon=t.lon, rat=t.rat, operator=t.operator, rsrp=t.rsrp,
                     sinr=t.sinr, rssi=t.rssi, outdoor=t.outdoor, timestamp=t.timestamp)

    def test_table_indexing_yields_records(self):
        recs = [_record(id=i, rsrp=-100 + i, rssi=-70 + i) for i in range(5)]
        t = LteTable.from_records(recs)
        assert list(t) == recs
        assert len(t[1:3]) == 2

    def test_filter_rat(self):
        t = LteTable.from_records([_record(id=0), _record(id=1, rat=Rat.NR5G_SA)])
        assert t.filter_rat(Rat.LTE4G).ids.tolist() == [0]
        assert len(t.filter_rat(None)) == 2


class TestCsv:
    def test_round_trip(self, tmp_path, small_world):
        _, ds = small_world
        sub = ds.records.subset(np.arange(0, len(ds.records), 7))
        path = tmp_path / "lte.csv"
        write_lte_csv(sub, path)
        back = parse_lte_csv(path)
        for name, col in sub._columns().items():
            assert np.array_equal(getattr(back, name), col), name

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            parse_lte_csv(tmp_path / "nope.csv")

    def test_bad_header(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("id,lat\n1,2\n")
        with pytest.raises(DataError, match="header"):
            parse_lte_csv(p)

    def test_error_names_line_and_field(self, tmp_path):
        p = tmp_path / "a.csv"
        bad = "2,2022-10-03T00:00:05Z,40.5,116.0,LTE4G,MOBILE,-100,abc,-72,1"
        _write_rows(p, [GOOD_ROW, bad])
        with pytest.raises(DataError, match=r"row 3: bad sinr 'abc'"):
            parse_lte_csv(p)

    def test_unknown_enum_tag(self, tmp_path):
        p = tmp_path / "a.csv"
        _write_rows(p, [GOOD_ROW.replace("MOBILE", "OTHER")])
        with pytest.raises(DataError, match="operator"):
            parse_lte_csv(p)

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "a.csv"
        _write_rows(p, [GOOD_ROW + ",9"])
        with pytest.raises(DataError, match="expected 10 fields"):
            parse_lte_csv(p)

    def test_range_violation_reports_row(self, tmp_path):
        p = tmp_path / "a.csv"
        _write_rows(p, [GOOD_ROW, GOOD_ROW.replace("1,2022", "2,2022").replace(",10,", ",99,")])
        with pytest.raises(DataError, match="row 3: sinr 99"):
            parse_lte_csv(p)

    def test_duplicate_ids(self, tmp_path):
        p = tmp_path / "a.csv"
        _write_rows(p, [GOOD_ROW, GOOD_ROW])
        with pytest.raises(DataError, match="duplicate"):
            parse_lte_csv(p)

    def test_timestamp_parsed_as_utc(self, tmp_path):
        p = tmp_path / "a.csv"
        _write_rows(p, [GOOD_ROW])
        assert parse_lte_csv(p).timestamp[0] == 1664755205


class TestRounding:
    def test_half_away_from_zero(self):
        x = np.array([0.5, 1.5, 2.5, -0.5, -1.5, 0.49, -0.49])
        assert round_half_away(x).tolist() == [1, 2, 3, -1, -2, 0, 0]


class TestSynthConfig:
    def test_defaults(self):
        cfg = SynthConfig()
        assert cfg.m_stations == 100 and cfg.class_count == 10
        assert cfg.attenuation_shift_db[0] == 0.0 and cfg.attenuation_shift_db[-1] == 8.45

    @pytest.mark.parametrize("kw", [dict(outdoor_prob=(0.5,) * 3), dict(noise_sigma=-1),
                                    dict(attenuation_shift_db=tuple(range(10, 0, -1))),
                                    dict(user_radius_km=(0.0, 1.0)), dict(m_stations=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SynthConfig(**kw)

    def test_dict_round_trip(self):
        cfg = SynthConfig(m_stations=7, station_bias_sigma=1.0)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            SynthConfig.from_dict({"bogus": 1})


class TestSynthesis:
    def test_shapes_and_ranges(self, small_cfg, small_world):
        radar, ds = small_world
        n = small_cfg.m_stations * small_cfg.n_windows * small_cfg.users_per_station
        assert len(ds.records) == n == len(ds.true_class)
        assert len(radar) == small_cfg.n_windows
        assert set(np.unique(ds.true_class)) <= set(range(small_cfg.class_count))

    def test_rsrp_is_rssi_minus_rb_offset(self, small_cfg, small_world):
        _, ds = small_world
        assert np.all(ds.records.rssi - ds.records.rsrp == small_cfg.rb_offset_db)
        assert small_cfg.rb_offset_db == 28  # 10 log10(50 * 12)

    def test_deterministic(self, small_cfg, small_world):
        radar, ds = small_world
        again = synthesize_dataset(small_cfg, synthesize_radar(small_cfg))
        for name, col in ds.records._columns().items():
            assert np.array_equal(getattr(again.records, name), col)

    def test_seed_changes_output(self, small_cfg, small_world):
        _, ds = small_world
        cfg = SynthConfig(**{**small_cfg.to_dict(), "seed": 1})
        other = synthesize_dataset(cfg, synthesize_radar(cfg))
        assert not np.array_equal(other.records.rssi, ds.records.rssi)

    def test_truth_matches_radar_at_station(self, small_world):
        radar, ds = small_world
        sites = ds.station_latlon
        for w in (0, 7):
            expect = bin_labels(ds.binning, interpolate_rain_many(radar[w], sites[:, 0], sites[:, 1]))
            sel = ds.window == w
            assert np.array_equal(ds.true_class[sel], expect[ds.station[sel]])

    def test_every_class_visited(self, small_cfg, small_world):
        radar, _ = small_world
        levels = [np.median(g.values) for g in radar[: small_cfg.class_count]]
        assert len(set(np.round(levels, 6))) == small_cfg.class_count

    def test_attenuation_lowers_rssi(self, small_world):
        _, ds = small_world
        lo = ds.records.rssi[ds.true_class == ds.true_class.min()].mean()
        hi = ds.records.rssi[ds.true_class == ds.true_class.max()].mean()
        assert lo - hi > 5.0

    def test_outdoor_share_follows_class(self, small_cfg, small_world):
        _, ds = small_world
        for c in (0, small_cfg.class_count - 1):
            share = ds.records.outdoor[ds.true_class == c].mean()
            assert abs(share - small_cfg.outdoor_prob[c]) < 0.05

    def test_rerun_matches_per_station(self, small_cfg):
        a = SynthConfig(**{**small_cfg.to_dict(), "n_windows": 10})
        radar = synthesize_radar(a)
        full = synthesize_dataset(a, radar)
        assert np.array_equal(station_positions(a), full.station_latlon)
        sel = full.station == 3
        again = synthesize_dataset(a, radar)
        assert np.array_equal(full.records.rssi[sel], again.records.rssi[again.station == 3])

    def test_truth_sidecar_round_trip(self, tmp_path, small_world):
        _, ds = small_world
        p = tmp_path / "truth.csv"
        write_truth_csv(ds, p)
        back = read_truth_csv(p)
        assert len(back) == len(ds.records)
        ids = ds.records.ids
        assert all(back[int(ids[i])] == int(ds.true_class[i]) for i in range(0, len(ids), 97))

    def test_radar_must_cover_extent(self, small_cfg, small_world):
        radar, _ = small_world
        tiny = SynthConfig(**{**small_cfg.to_dict(), "extent": dict(lat_min=10.0, lat_max=11.0,
                                                                    lon_min=10.0, lon_max=11.0)})
        with pytest.raises(DataError, match="cover"):
            synthesize_dataset(tiny, radar)
