"""LTE measurement records: parsing, validation and synthetic generation.

CSV schema (header required, in this order)::

    id,timestamp,lat,lon,rat,operator,rsrp,sinr,rssi,outdoor

``timestamp`` is ISO-8601 UTC (``2022-10-03T00:12:05Z``), ``rat`` is one of
``LTE4G``/``NR5G_SA``, ``operator`` one of the :class:`Operator` tags and
``outdoor`` is ``1`` or ``0``. RSRP/RSSI are integer dBm, SINR integer dB.

The synthetic generator draws received powers from a log-distance path model,
subtracts the attenuation shift of the rainfall class at the serving station,
adds Gaussian noise and quantizes to integers. The outdoor flag is drawn with
the class's outdoor probability, so both signal statistics and the outdoor
share carry the weather.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, MissingInputError
from .geodata import (
    KM_PER_DEG_LAT,
    BoundingBox,
    GeoPoint,
    LabelBinning,
    RadarGrid,
    bin_labels,
    format_time,
    haversine_km_arrays,
    interpolate_rain_many,
)

logger = logging.getLogger(__name__)

RSRP_RANGE = (-156, -31)  # 3GPP TS 36.133 reporting range
SINR_RANGE = (-23, 40)
CSV_COLUMNS = ("id", "timestamp", "lat", "lon", "rat", "operator", "rsrp", "sinr", "rssi", "outdoor")


class Rat(enum.IntEnum):
    LTE4G = 0
    NR5G_SA = 1


class Operator(enum.IntEnum):
    MOBILE = 0
    UNICOM = 1
    TELECOM = 2
    BROADNET = 3


@dataclass(frozen=True)
class LteRecord:
    id: int
    loc: GeoPoint
    rat: Rat
    operator: Operator
    rsrp: int
    sinr: int
    rssi: int
    outdoor: bool
    timestamp: int  # seconds since the Unix epoch, UTC

    def __post_init__(self) -> None:
        msg = _metric_problem(self.rsrp, self.sinr, self.rssi)
        if msg:
            raise DataError(f"record {self.id}: {msg}")


def _metric_problem(rsrp: int, sinr: int, rssi: int) -> str | None:
    if not RSRP_RANGE[0] <= rsrp <= RSRP_RANGE[1]:
        return f"rsrp {rsrp} outside {RSRP_RANGE}"
    if not SINR_RANGE[0] <= sinr <= SINR_RANGE[1]:
        return f"sinr {sinr} outside {SINR_RANGE}"
    if rssi < rsrp:
        return f"rssi {rssi} below rsrp {rsrp}"
    return None


def _check_metrics(rsrp, sinr, rssi) -> None:
    def fail(mask, msg):
        k = int(np.flatnonzero(mask)[0])
        raise DataError(f"record at position {k}: " + msg(k))

    bad = (rsrp < RSRP_RANGE[0]) | (rsrp > RSRP_RANGE[1])
    if bad.any():
        fail(bad, lambda k: f"rsrp {rsrp[k]} outside {RSRP_RANGE}")
    bad = (sinr < SINR_RANGE[0]) | (sinr > SINR_RANGE[1])
    if bad.any():
        fail(bad, lambda k: f"sinr {sinr[k]} outside {SINR_RANGE}")
    bad = rssi < rsrp
    if bad.any():
        fail(bad, lambda k: f"rssi {rssi[k]} below rsrp {rsrp[k]}")


@dataclass
class LteTable(Sequence):
    """Column store of validated records; indexing yields :class:`LteRecord`."""

    ids: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    rat: np.ndarray
    operator: np.ndarray
    rsrp: np.ndarray
    sinr: np.ndarray
    rssi: np.ndarray
    outdoor: np.ndarray
    timestamp: np.ndarray

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        self.rat = np.asarray(self.rat, dtype=np.int8)
        self.operator = np.asarray(self.operator, dtype=np.int8)
        self.rsrp = np.asarray(self.rsrp, dtype=np.int32)
        self.sinr = np.asarray(self.sinr, dtype=np.int32)
        self.rssi = np.asarray(self.rssi, dtype=np.int32)
        self.outdoor = np.asarray(self.outdoor, dtype=bool)
        self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        n = len(self.ids)
        for name in ("lat", "lon", "rat", "operator", "rsrp", "sinr", "rssi", "outdoor", "timestamp"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if n:
            if not (np.all(np.isfinite(self.lat)) and np.all(np.isfinite(self.lon))):
                raise DataError("non-finite coordinates")
            if np.any(np.abs(self.lat) > 90) or np.any(np.abs(self.lon) > 180):
                raise DataError("coordinates out of bounds")
            _check_metrics(self.rsrp, self.sinr, self.rssi)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(np.arange(len(self))[i])
        return LteRecord(
            id=int(self.ids[i]),
            loc=GeoPoint(self.lat[i], self.lon[i]),
            rat=Rat(int(self.rat[i])),
            operator=Operator(int(self.operator[i])),
            rsrp=int(self.rsrp[i]),
            sinr=int(self.sinr[i]),
            rssi=int(self.rssi[i]),
            outdoor=bool(self.outdoor[i]),
            timestamp=int(self.timestamp[i]),
        )

    def __iter__(self) -> Iterator[LteRecord]:
        return (self[i] for i in range(len(self)))

    def subset(self, idx) -> "LteTable":
        return LteTable(**{k: v[idx] for k, v in self._columns().items()})

    def _columns(self) -> dict:
        return {
            "ids": self.ids, "lat": self.lat, "lon": self.lon, "rat": self.rat,
            "operator": self.operator, "rsrp": self.rsrp, "sinr": self.sinr,
            "rssi": self.rssi, "outdoor": self.outdoor, "timestamp": self.timestamp,
        }

    @classmethod
    def from_records(cls, records: Sequence[LteRecord]) -> "LteTable":
        recs = list(records)
        return cls(
            ids=[r.id for r in recs], lat=[r.loc.lat for r in recs], lon=[r.loc.lon for r in recs],
            rat=[int(r.rat) for r in recs], operator=[int(r.operator) for r in recs],
            rsrp=[r.rsrp for r in recs], sinr=[r.sinr for r in recs], rssi=[r.rssi for r in recs],
            outdoor=[r.outdoor for r in recs], timestamp=[r.timestamp for r in recs],
        )

    @classmethod
    def concat(cls, tables: Sequence["LteTable"]) -> "LteTable":
        cols = [t._columns() for t in tables]
        return cls(**{k: np.concatenate([c[k] for c in cols]) for k in cols[0]})

    def filter_rat(self, rat: Rat | None) -> "LteTable":
        if rat is None:
            return self
        return self.subset(np.flatnonzero(self.rat == int(rat)))


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _epoch(text: str) -> int:
    t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return int(t.timestamp())


def write_lte_csv(table: LteTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        rats = [r.name for r in Rat]
        ops = [o.name for o in Operator]
        for i in range(len(table)):
            w.writerow((
                int(table.ids[i]), _iso(table.timestamp[i]),
                repr(float(table.lat[i])), repr(float(table.lon[i])),
                rats[table.rat[i]], ops[table.operator[i]],
                int(table.rsrp[i]), int(table.sinr[i]), int(table.rssi[i]),
                1 if table.outdoor[i] else 0,
            ))


def parse_lte_csv(path) -> LteTable:
    """Read and validate an LTE CSV file; errors name the file line and field."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"LTE file not found: {path}")
    cols: dict[str, list] = {c: [] for c in CSV_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"{path}: row {line}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            for name, raw in zip(CSV_COLUMNS, row):
                try:
                    cols[name].append(_PARSERS[name](raw.strip()))
                except (ValueError, KeyError) as exc:
                    raise DataError(f"{path}: row {line}: bad {name} {raw!r} ({exc})") from None
            lat, lon = cols["lat"][-1], cols["lon"][-1]
            if not (math.isfinite(lat) and math.isfinite(lon) and abs(lat) <= 90 and abs(lon) <= 180):
                raise DataError(f"{path}: row {line}: bad lat/lon ({lat}, {lon})")
            msg = _metric_problem(cols["rsrp"][-1], cols["sinr"][-1], cols["rssi"][-1])
            if msg:
                raise DataError(f"{path}: row {line}: {msg}")
    table = LteTable(
        ids=cols["id"], lat=cols["lat"], lon=cols["lon"], rat=cols["rat"], operator=cols["operator"],
        rsrp=cols["rsrp"], sinr=cols["sinr"], rssi=cols["rssi"], outdoor=cols["outdoor"],
        timestamp=cols["timestamp"],
    )
    if len(np.unique(table.ids)) != len(table):
        raise DataError(f"{path}: duplicate record ids")
    logger.info("parsed %d LTE records from %s", len(table), path)
    return table


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _parse_flag(s: str) -> bool:
    if s not in ("0", "1"):
        raise ValueError("expected 0 or 1")
    return s == "1"


_PARSERS = {
    "id": _parse_int,
    "timestamp": _epoch,
    "lat": _parse_float,
    "lon": _parse_float,
    "rat": lambda s: int(Rat[s]),
    "operator": lambda s: int(Operator[s]),
    "rsrp": _parse_int,
    "sinr": _parse_int,
    "rssi": _parse_int,
    "outdoor": _parse_flag,
}


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

YANQING_EXTENT = BoundingBox(40.35, 40.65, 115.80, 116.20)
DEFAULT_START = "2022-10-03T00:00:00Z"


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class SynthConfig:
    """Parameters of the synthetic LTE + radar world.

    The defaults are the calibrated baseline: 100 stations, 10 rainfall
    classes, attenuation shifts from 0 to 8.45 dB and a class-coupled outdoor
    share.
    """

    m_stations: int = 100
    users_per_station: int = 100  # reports per station per window
    class_count: int = 10
    attenuation_shift_db: tuple = tuple(np.round(np.linspace(0.0, 8.45, 10), 6))
    outdoor_prob: tuple = tuple(np.round(np.linspace(0.85, 0.15, 10), 6))
    noise_sigma: float = 2.0
    seed: int = 0
    extent: BoundingBox = YANQING_EXTENT
    n_windows: int = 50
    window_seconds: int = 1800
    start: str = DEFAULT_START
    # per-station, per-window RSSI bias ("antenna dampness"); 0 disables it
    station_bias_sigma: float = 0.0
    # log-distance path model
    ref_rssi_dbm: float = -60.0
    ref_distance_km: float = 0.1
    path_exponent: float = 3.5
    user_radius_km: tuple = (0.2, 0.8)
    indoor_loss_db: float = 0.0
    resource_blocks: int = 50
    interference_floor_dbm: float = -100.0
    sinr_noise_sigma: float = 2.0
    nr5g_fraction: float = 0.0
    # radar truth
    rain_max: float = 2.0  # mm per window at the top of the range
    rain_jitter: float = 0.25  # spatial perturbation, fraction of one class step
    grid_cell_deg: float = 0.01

    def __post_init__(self) -> None:
        self.attenuation_shift_db = tuple(float(x) for x in self.attenuation_shift_db)
        self.outdoor_prob = tuple(float(x) for x in self.outdoor_prob)
        self.user_radius_km = tuple(float(x) for x in self.user_radius_km)
        if isinstance(self.extent, dict):
            self.extent = BoundingBox(**self.extent)
        r = self.class_count
        if r < 1:
            raise ConfigError("class_count must be >= 1")
        if len(self.attenuation_shift_db) != r or len(self.outdoor_prob) != r:
            raise ConfigError(f"per-class lists must have length class_count={r}")
        if np.any(np.diff(self.attenuation_shift_db) < 0):
            raise ConfigError("attenuation_shift_db must be nondecreasing")
        p = np.asarray(self.outdoor_prob)
        if np.any((p < 0) | (p > 1)):
            raise ConfigError("outdoor_prob entries must lie in [0, 1]")
        if np.any(np.diff(p) > 0):
            raise ConfigError("outdoor_prob must be nonincreasing")
        if self.m_stations < 1 or self.users_per_station < 1 or self.n_windows < 1:
            raise ConfigError("m_stations, users_per_station and n_windows must be positive")
        if self.noise_sigma < 0 or self.station_bias_sigma < 0 or self.sinr_noise_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")
        lo, hi = self.user_radius_km
        if not 0 < lo <= hi:
            raise ConfigError("user_radius_km must satisfy 0 < min <= max")
        if not 0 <= self.nr5g_fraction <= 1:
            raise ConfigError("nr5g_fraction must lie in [0, 1]")
        if not 0 <= self.rain_jitter < 0.5:
            raise ConfigError("rain_jitter must lie in [0, 0.5)")

    @property
    def rb_offset_db(self) -> int:
        """RSSI - RSRP in dB: total power over 12 subcarriers per resource block."""
        return int(round_half_away(np.array(10 * math.log10(12 * self.resource_blocks))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extent"] = asdict(self.extent)
        d["attenuation_shift_db"] = list(self.attenuation_shift_db)
        d["outdoor_prob"] = list(self.outdoor_prob)
        d["user_radius_km"] = list(self.user_radius_km)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


def station_positions(cfg: SynthConfig) -> np.ndarray:
    """Jittered lattice of true station sites inside the extent, (m, 2) lat/lon."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    m = cfg.m_stations
    ext = cfg.extent
    lat_span = ext.lat_max - ext.lat_min
    lon_span = ext.lon_max - ext.lon_min
    cols = max(1, int(math.ceil(math.sqrt(m * lon_span / lat_span * math.cos(math.radians(ext.lat_min))))))
    rows = int(math.ceil(m / cols))
    margin = 0.1
    cells = [(i, j) for i in range(rows) for j in range(cols)][:m]
    out = np.empty((m, 2))
    for s, (i, j) in enumerate(cells):
        u = (i + 0.5 + rng.uniform(-0.25, 0.25)) / rows
        v = (j + 0.5 + rng.uniform(-0.25, 0.25)) / cols
        out[s, 0] = ext.lat_min + (margin + (1 - 2 * margin) * u) * lat_span
        out[s, 1] = ext.lon_min + (margin + (1 - 2 * margin) * v) * lon_span
    return out


def synthesize_radar(cfg: SynthConfig) -> list[RadarGrid]:
    """Radar truth: one grid per window.

    Each window rains at one level (a class center) plus a smooth spatial
    perturbation of ``rain_jitter`` class steps, rescaled so that every
    window reaches exactly +/- the jitter. Levels follow back-to-back random
    permutations of the classes, so every block of ``class_count``
    consecutive windows visits every class.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    r = cfg.class_count
    step = cfg.rain_max / r
    a = cfg.rain_jitter * step
    levels = np.concatenate([rng.permutation(r) for _ in range(-(-cfg.n_windows // r))])[:cfg.n_windows]
    ext = cfg.extent
    pad = 2 * cfg.grid_cell_deg
    lat0, lon0 = ext.lat_min - pad, ext.lon_min - pad
    rows = int(math.ceil((ext.lat_max - ext.lat_min + 2 * pad) / cfg.grid_cell_deg))
    cols = int(math.ceil((ext.lon_max - ext.lon_min + 2 * pad) / cfg.grid_cell_deg))
    yy, xx = np.meshgrid(np.linspace(0, 1, rows), np.linspace(0, 1, cols), indexing="ij")
    t0 = datetime.fromisoformat(cfg.start.replace("Z", "+00:00"))
    grids = []
    for w in range(cfg.n_windows):
        ph = rng.uniform(0, 2 * np.pi, size=4)
        f = np.sin(2 * np.pi * 0.7 * xx + ph[0]) * np.cos(2 * np.pi * 0.5 * yy + ph[1]) \
            + 0.5 * np.sin(2 * np.pi * 1.3 * (xx + yy) + ph[2])
        f = 2 * (f - f.min()) / (f.max() - f.min()) - 1 if a > 0 else np.zeros_like(f)
        values = a + levels[w] * step + a * f
        grids.append(RadarGrid(
            origin=GeoPoint(lat0, lon0),
            cell_size_deg=(cfg.grid_cell_deg, cfg.grid_cell_deg),
            rows=rows, cols=cols,
            values=np.maximum(values, 0.0),
            window_start=datetime.fromtimestamp(t0.timestamp() + w * cfg.window_seconds, tz=timezone.utc),
        ))
    return grids


@dataclass
class SyntheticDataset:
    records: LteTable
    true_class: np.ndarray  # per record
    station: np.ndarray  # true serving station per record
    window: np.ndarray  # window index per record
    station_latlon: np.ndarray
    binning: LabelBinning
    config: SynthConfig = field(repr=False)


def _window_index(grids: Sequence[RadarGrid], cfg: SynthConfig) -> list[int]:
    t0 = grids[0].window_start.timestamp()
    return [int(round((g.window_start.timestamp() - t0) / cfg.window_seconds)) for g in grids]


def synthesize_dataset(cfg: SynthConfig, rain_truth: Sequence[RadarGrid] | RadarGrid) -> SyntheticDataset:
    """Draw LTE reports for every station and radar window.

    Generation is partitioned per station; each station draws from its own
    substream of the master seed, so the output does not depend on the order
    in which partitions are produced.
    """
    grids = [rain_truth] if isinstance(rain_truth, RadarGrid) else list(rain_truth)
    if not grids:
        raise DataError("no radar windows given")
    for g in grids:
        if not g.bbox.covers(cfg.extent):
            raise DataError(f"radar grid {g.bbox} does not cover extent {cfg.extent}")
    r = cfg.class_count
    binning = LabelBinning.fit([g.values for g in grids], r) if r > 1 else None
    sites = station_positions(cfg)
    shifts = np.asarray(cfg.attenuation_shift_db)
    p_out = np.asarray(cfg.outdoor_prob)
    n_w = len(grids)
    win_ids = _window_index(grids, cfg)
    # local rainfall class of every station in every window
    local_cls = np.zeros((n_w, cfg.m_stations), dtype=np.int64)
    if binning is not None:
        for w, g in enumerate(grids):
            local_cls[w] = bin_labels(binning, interpolate_rain_many(g, sites[:, 0], sites[:, 1]))
    n_u = cfg.users_per_station
    rb = cfg.rb_offset_db
    lo, hi = cfg.user_radius_km
    streams = np.random.SeedSequence([cfg.seed, 3]).spawn(cfg.m_stations)
    parts = []
    for s in range(cfg.m_stations):
        rng = np.random.default_rng(streams[s])
        cls = np.repeat(local_cls[:, s], n_u)
        win = np.repeat(np.arange(n_w), n_u)
        total = n_w * n_u
        radius = np.sqrt(rng.uniform(lo * lo, hi * hi, size=total))
        theta = rng.uniform(0, 2 * np.pi, size=total)
        lat = sites[s, 0] + radius * np.cos(theta) / KM_PER_DEG_LAT
        lon = sites[s, 1] + radius * np.sin(theta) / (KM_PER_DEG_LAT * math.cos(math.radians(sites[s, 0])))
        dist = np.maximum(haversine_km_arrays(sites[s, 0], sites[s, 1], lat, lon), 1e-3)
        outdoor = rng.random(total) < p_out[cls]
        bias = np.repeat(rng.normal(0.0, cfg.station_bias_sigma, size=n_w), n_u) \
            if cfg.station_bias_sigma > 0 else 0.0
        signal = (cfg.ref_rssi_dbm - 10 * cfg.path_exponent * np.log10(dist / cfg.ref_distance_km)
                  - shifts[cls] - bias - cfg.indoor_loss_db * (~outdoor))
        rssi_c = signal + rng.normal(0.0, 1.0, size=total) * cfg.noise_sigma
        rssi = np.clip(round_half_away(rssi_c), RSRP_RANGE[0] + rb, RSRP_RANGE[1] + rb).astype(np.int32)
        sinr_c = signal - cfg.interference_floor_dbm + rng.normal(0.0, 1.0, size=total) * cfg.sinr_noise_sigma
        sinr = np.clip(round_half_away(sinr_c), *SINR_RANGE).astype(np.int32)
        offset = rng.uniform(0, cfg.window_seconds, size=total).astype(np.int64)
        t0 = int(grids[0].window_start.timestamp())
        ts = t0 + np.repeat(np.asarray(win_ids), n_u) * cfg.window_seconds + offset
        rat = (rng.random(total) < cfg.nr5g_fraction).astype(np.int8)
        op = rng.choice(len(Operator), size=total, p=[0.5, 0.25, 0.2, 0.05]).astype(np.int8)
        parts.append(dict(lat=lat, lon=lon, rssi=rssi, rsrp=rssi - rb, sinr=sinr, outdoor=outdoor,
                          ts=ts, rat=rat, op=op, cls=cls, win=win, station=np.full(total, s)))
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    order = np.lexsort((cat["station"], cat["ts"]))
    cat = {k: v[order] for k, v in cat.items()}
    table = LteTable(
        ids=np.arange(len(order)), lat=cat["lat"], lon=cat["lon"], rat=cat["rat"],
        operator=cat["op"], rsrp=cat["rsrp"], sinr=cat["sinr"], rssi=cat["rssi"],
        outdoor=cat["outdoor"], timestamp=cat["ts"],
    )
    return SyntheticDataset(table, cat["cls"], cat["station"], cat["win"], sites, binning, cfg)


def write_truth_csv(ds: SyntheticDataset, path) -> None:
    """Sidecar mapping record id to generator ground truth."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id", "true_class", "station", "window"))
        for row in zip(ds.records.ids, ds.true_class, ds.station, ds.window):
            w.writerow(tuple(int(x) for x in row))


def read_truth_csv(path) -> dict[int, int]:
    with open(path, newline="") as fh:
        return {int(row["id"]): int(row["true_class"]) for row in csv.DictReader(fh)}
