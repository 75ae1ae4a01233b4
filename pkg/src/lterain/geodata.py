"""Geodesic helpers, station-position estimation, radar grids and label binning.

Coordinates are plain latitude/longitude in degrees. Distances use the
haversine formula on a sphere of radius ``EARTH_RADIUS_KM``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError, MissingInputError

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG_LAT = EARTH_RADIUS_KM * math.pi / 180.0
WARM_START_SIZE = 20000


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise DataError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise DataError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise DataError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self) -> None:
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise DataError(f"empty bounding box {self}")
        GeoPoint(self.lat_min, self.lon_min)
        GeoPoint(self.lat_max, self.lon_max)

    def contains(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        return (
            (lat >= self.lat_min) & (lat <= self.lat_max)
            & (lon >= self.lon_min) & (lon <= self.lon_max)
        )

    def covers(self, other: "BoundingBox") -> bool:
        return (
            self.lat_min <= other.lat_min and other.lat_max <= self.lat_max
            and self.lon_min <= other.lon_min and other.lon_max <= self.lon_max
        )


def as_latlon(points) -> np.ndarray:
    """Normalize a sequence of GeoPoints or an (N, 2) [lat, lon] array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        points = list(points)
        if points and isinstance(points[0], GeoPoint):
            arr = np.array([(p.lat, p.lon) for p in points], dtype=float)
        else:
            arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"expected (N, 2) lat/lon array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("non-finite coordinates")
    if np.any(np.abs(arr[:, 0]) > 90.0) or np.any(np.abs(arr[:, 1]) > 180.0):
        raise DataError("coordinates out of lat/lon bounds")
    return arr


def haversine_km_arrays(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized great-circle distance in km; inputs broadcast."""
    p1 = np.radians(np.asarray(lat1, dtype=float))
    p2 = np.radians(np.asarray(lat2, dtype=float))
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_km_arrays(a.lat, a.lon, b.lat, b.lon))


def pairwise_km(latlon) -> np.ndarray:
    """Symmetric matrix of haversine distances with an exact zero diagonal."""
    arr = as_latlon(latlon)
    d = haversine_km_arrays(arr[:, None, 0], arr[:, None, 1], arr[None, :, 0], arr[None, :, 1])
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def _unit_vectors(latlon: np.ndarray) -> np.ndarray:
    lat = np.radians(latlon[:, 0])
    lon = np.radians(latlon[:, 1])
    return np.column_stack((np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)))


def _to_latlon(u: np.ndarray) -> np.ndarray:
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    lat = np.degrees(np.arcsin(np.clip(u[:, 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(u[:, 1], u[:, 0]))
    return np.column_stack((lat, lon))


# ---------------------------------------------------------------------------
# Station clustering
# ---------------------------------------------------------------------------


@dataclass
class StationCluster:
    center: GeoPoint
    member_ids: list

    def __post_init__(self) -> None:
        if len(self.member_ids) == 0:
            raise DataError("a station cluster needs at least one member")


def assign_to_centers(latlon, centers) -> np.ndarray:
    """Index of the nearest center (haversine) for every point.

    Chord length between unit vectors is monotone in great-circle distance, so
    the nearest center maximizes the dot product. Ties go to the lower index.
    """
    return _nearest(_unit_vectors(as_latlon(latlon)), _unit_vectors(as_latlon(centers)))


def _kmeanspp(units: np.ndarray, latlon: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each step keeps the best of a few D^2-sampled candidates.

    D is the chord between unit vectors, the quantity spherical k-means
    minimizes; it orders points exactly as haversine does.
    """
    n = len(units)
    trials = 2 + int(math.log(m)) if m > 1 else 1
    chosen = [int(rng.integers(n))]
    def chord2(i: int) -> np.ndarray:
        d = np.maximum(2.0 - 2.0 * (units @ units[i]), 0.0)
        near = np.flatnonzero(d < 1e-12)
        d[near[(latlon[near] == latlon[i]).all(axis=1)]] = 0.0
        return d

    d2 = chord2(chosen[0])
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0.0:
            # remaining points all coincide with chosen centers
            raise DataError("fewer distinct points than requested clusters")
        cand = np.searchsorted(np.cumsum(d2), rng.random(trials) * total, side="right")
        cand = np.minimum(cand, n - 1)
        best = None
        for idx in cand:
            idx = int(idx)
            while d2[idx] == 0.0:
                idx -= 1
            d_new = np.minimum(d2, chord2(idx))
            pot = d_new.sum()
            if best is None or pot < best[0]:
                best = (pot, idx, d_new)
        chosen.append(best[1])
        d2 = best[2]
    return units[chosen].copy()


def _nearest(units: np.ndarray, centers: np.ndarray) -> np.ndarray:
    out = np.empty(len(units), dtype=np.int64)
    chunk = 65536
    for start in range(0, len(units), chunk):
        out[start:start + chunk] = np.argmax(units[start:start + chunk] @ centers.T, axis=1)
    return out


def _top2(units: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest center plus chord distances to the nearest and second nearest."""
    dots = units @ centers.T
    best = np.argmax(dots, axis=1)
    rows = np.arange(len(units))
    d1 = dots[rows, best]
    dots[rows, best] = -np.inf
    d2 = dots.max(axis=1) if centers.shape[0] > 1 else np.full(len(units), -np.inf)
    chord = lambda d: np.sqrt(np.maximum(2.0 - 2.0 * d, 0.0))
    return best, chord(d1), np.where(np.isfinite(d2), chord(d2), np.inf)


def _lloyd(units: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    """Spherical Lloyd iterations with Hamerly bounds on chord distance.

    Upper bound ``hi`` to the own center and lower bound ``lo`` to any other
    center let most points skip reassignment; the result equals plain Lloyd.
    """
    m = len(centers)
    centers = centers.copy()
    labels = np.empty(len(units), dtype=np.int64)
    hi = np.empty(len(units))
    lo = np.empty(len(units))
    chunk = 65536
    for start in range(0, len(units), chunk):
        sl = slice(start, start + chunk)
        labels[sl], hi[sl], lo[sl] = _top2(units[sl], centers)
    slack = 1e-12
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=m)
        if np.any(counts == 0):
            # re-seed empty clusters with the worst-served points, then reassign all
            own = np.einsum("ij,ij->i", units, centers[labels])
            for c in np.flatnonzero(counts == 0):
                far = int(np.argmin(own))
                centers[c] = units[far]
                own[far] = np.inf
            labels, hi, lo = _top2(units, centers)
            counts = np.bincount(labels, minlength=m)
        sums = np.column_stack([np.bincount(labels, weights=units[:, j], minlength=m) for j in range(3)])
        nonempty = counts > 0
        new_centers = centers.copy()
        new_centers[nonempty] = sums[nonempty] / np.linalg.norm(sums[nonempty], axis=1, keepdims=True)
        shift = np.linalg.norm(new_centers - centers, axis=1)
        centers = new_centers
        hi += shift[labels] + slack
        lo -= shift.max() + slack
        check = np.flatnonzero(hi >= lo)
        if len(check):
            hi[check] = np.sqrt(np.maximum(2.0 - 2.0 * np.einsum("ij,ij->i", units[check], centers[labels[check]]), 0.0))
            check = check[hi[check] >= lo[check]]
        changed = False
        for start in range(0, len(check), chunk):
            idx = check[start:start + chunk]
            lab, d1, d2 = _top2(units[idx], centers)
            changed = changed or bool(np.any(lab != labels[idx]))
            labels[idx], hi[idx], lo[idx] = lab, d1, d2
        if not changed:
            break
    else:
        logger.warning("k-means did not converge in %d iterations", max_iter)
    return centers, labels


def cluster_labels(latlon, m: int, seed: int = 0, max_iter: int = 100, n_init: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Spherical k-means (k-means++ seeding) returning ``(labels, centers)``.

    Centers are ordered by latitude then longitude and labels refer to that
    order. The input is canonicalized before seeding, so permuting the points
    only permutes the labels.
    """
    arr = as_latlon(latlon)
    if len(arr) == 0:
        raise DataError("cannot cluster an empty point set")
    if m < 1:
        raise DataError(f"cluster count must be positive, got {m}")
    distinct = len(np.unique(arr, axis=0))
    if m > distinct:
        raise DataError(f"requested {m} clusters but only {distinct} distinct points")

    order = np.lexsort((arr[:, 1], arr[:, 0]))
    pts = arr[order]
    units = _unit_vectors(pts)
    rng = np.random.default_rng(seed)
    sub = np.arange(len(pts))
    if len(pts) > WARM_START_SIZE:
        # restarts run on a subsample; the winner is refined on every point
        pick = np.sort(rng.choice(len(pts), WARM_START_SIZE, replace=False))
        if len(np.unique(pts[pick], axis=0)) >= m:
            sub = pick
    best = None
    for _ in range(n_init):
        start = _kmeanspp(units[sub], pts[sub], m, rng)
        cand, lab = _lloyd(units[sub], start, max_iter)
        inertia = float(np.sum(1.0 - np.einsum("ij,ij->i", units[sub], cand[lab])))
        if best is None or inertia < best[0]:
            best = (inertia, cand)
    centers, labels = best[1], None
    if len(sub) < len(pts):
        centers, labels = _lloyd(units, centers, max_iter)
    else:
        labels = _nearest(units, centers)

    center_ll = _to_latlon(centers)
    # clusters whose members coincide keep that exact coordinate
    for c in range(m):
        members = pts[labels == c]
        if len(members) and np.all(members == members[0]):
            center_ll[c] = members[0]
    center_ll[:, 1] = np.clip(center_ll[:, 1], -180.0, 180.0)

    canon = np.lexsort((center_ll[:, 1], center_ll[:, 0]))
    remap = np.empty(m, dtype=np.int64)
    remap[canon] = np.arange(m)
    out = np.empty(len(arr), dtype=np.int64)
    out[order] = remap[labels]
    return out, center_ll[canon]


def cluster_stations(points, m: int, seed: int = 0, ids: Sequence | None = None) -> list[StationCluster]:
    """Estimate ``m`` station positions by clustering report locations."""
    arr = as_latlon(points)
    labels, centers = cluster_labels(arr, m, seed)
    ids = np.arange(len(arr)) if ids is None else np.asarray(ids)
    if len(ids) != len(arr):
        raise DataError("ids and points differ in length")
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(m + 1))
    return [
        StationCluster(GeoPoint(*centers[c]), ids[order[bounds[c]:bounds[c + 1]]].tolist())
        for c in range(m)
    ]


def nearest_neighbors(centers, i: int, n_minus_1: int) -> list[int]:
    """Indices of the ``n_minus_1`` centers closest to center ``i``.

    Sorted by ascending haversine distance, ties by ascending index.
    """
    arr = as_latlon(centers)
    m = len(arr)
    if not 0 <= i < m:
        raise IndexError(f"center index {i} out of range for {m} centers")
    if not 0 <= n_minus_1 < m:
        raise DataError(f"cannot take {n_minus_1} neighbors from {m} centers")
    d = haversine_km_arrays(arr[i, 0], arr[i, 1], arr[:, 0], arr[:, 1])
    idx = np.arange(m)
    keep = idx != i
    order = np.lexsort((idx[keep], d[keep]))
    return idx[keep][order][:n_minus_1].tolist()


# ---------------------------------------------------------------------------
# Radar grids
# ---------------------------------------------------------------------------


def _parse_time(text: str) -> datetime:
    t = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if t.tzinfo is None:
        t = t.replace(tzinfo=timezone.utc)
    return t


def format_time(t: datetime) -> str:
    return t.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RadarGrid:
    """Rainfall per cell for one half-hour window.

    Row 0 is the southernmost row; cell (i, j) is centered at
    ``origin.lat + (i + 0.5) * dlat``, ``origin.lon + (j + 0.5) * dlon``.
    """

    origin: GeoPoint
    cell_size_deg: tuple[float, float]
    rows: int
    cols: int
    values: np.ndarray
    window_start: datetime

    def __post_init__(self) -> None:
        dlat, dlon = (float(x) for x in self.cell_size_deg)
        if not (dlat > 0 and dlon > 0):
            raise DataError(f"cell size must be positive, got {self.cell_size_deg}")
        self.cell_size_deg = (dlat, dlon)
        if self.rows < 1 or self.cols < 1:
            raise DataError(f"grid needs positive rows/cols, got {self.rows}x{self.cols}")
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.rows * self.cols:
            raise DataError(f"values length {vals.size} != rows*cols = {self.rows * self.cols}")
        vals = vals.reshape(self.rows, self.cols)
        if not np.all(np.isfinite(vals)):
            raise DataError("radar values must be finite")
        if np.any(vals < 0):
            raise DataError("radar values must be non-negative")
        self.values = vals
        if self.window_start.tzinfo is None:
            self.window_start = self.window_start.replace(tzinfo=timezone.utc)

    @property
    def bbox(self) -> BoundingBox:
        dlat, dlon = self.cell_size_deg
        return BoundingBox(
            self.origin.lat, self.origin.lat + self.rows * dlat,
            self.origin.lon, self.origin.lon + self.cols * dlon,
        )

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        dlat, dlon = self.cell_size_deg
        lats = self.origin.lat + (np.arange(self.rows) + 0.5) * dlat
        lons = self.origin.lon + (np.arange(self.cols) + 0.5) * dlon
        return lats, lons


def _frac_index(x: np.ndarray, x0: float, step: float, count: int) -> tuple[np.ndarray, np.ndarray]:
    f = (x - x0) / step - 0.5
    snapped = np.round(f)
    f = np.where(np.abs(f - snapped) < 1e-9, snapped, f)
    f = np.clip(f, 0.0, count - 1)
    i0 = np.minimum(np.floor(f), max(count - 2, 0)).astype(np.int64)
    return i0, f - i0


def interpolate_rain_many(grid: RadarGrid, lat, lon) -> np.ndarray:
    """Bilinear interpolation between cell centers for arrays of points.

    Points in the outer half-cell margin take the nearest edge-center values
    along the clamped axis.
    """
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    box = grid.bbox
    inside = box.contains(lat, lon)
    if not np.all(inside):
        k = int(np.flatnonzero(~inside)[0])
        raise DataError(f"point ({lat[k]}, {lon[k]}) outside radar grid box {box}")
    dlat, dlon = grid.cell_size_deg
    i0, ty = _frac_index(lat, grid.origin.lat, dlat, grid.rows)
    j0, tx = _frac_index(lon, grid.origin.lon, dlon, grid.cols)
    i1 = np.minimum(i0 + 1, grid.rows - 1)
    j1 = np.minimum(j0 + 1, grid.cols - 1)
    v = grid.values
    top = v[i0, j0] * (1 - tx) + v[i0, j1] * tx
    bot = v[i1, j0] * (1 - tx) + v[i1, j1] * tx
    return top * (1 - ty) + bot * ty


def interpolate_rain(grid: RadarGrid, p: GeoPoint) -> float:
    return float(interpolate_rain_many(grid, p.lat, p.lon)[0])


_NUM = re.compile(r"-?Infinity|NaN|-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


def _value_lines(text: str) -> list[int]:
    """Line number of every scalar token inside the ``values`` array."""
    key = re.search(r'"values"\s*:\s*\[', text)
    if key is None:
        return []
    start = key.end() - 1
    depth, end = 0, len(text)
    for pos in range(start, len(text)):
        ch = text[pos]
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                end = pos
                break
    base = text.count("\n", 0, start) + 1
    lines, last, line = [], start, base
    for tok in _NUM.finditer(text, start, end):
        line += text.count("\n", last, tok.start())
        last = tok.start()
        lines.append(line)
    return lines


def load_radar_grid(path) -> RadarGrid:
    """Read one radar window from its JSON document.

    Schema::

        {"origin": {"lat": .., "lon": ..}, "cell_size_deg": [dlat, dlon],
         "rows": R, "cols": C, "window_start": "2022-10-03T00:00:00Z",
         "values": [[row 0 ...], [row 1 ...], ...]}   # or a flat row-major list
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"radar file not found: {path}")
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    for key in ("origin", "cell_size_deg", "rows", "cols", "window_start", "values"):
        if key not in doc:
            raise FormatError(f"{path}: missing key {key!r}")
    flat = []
    for row in doc["values"]:
        flat.extend(row if isinstance(row, list) else [row])
    lines = _value_lines(text)
    for k, v in enumerate(flat):
        bad = not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0
        if bad:
            where = f"{path}:{lines[k]}" if k < len(lines) else str(path)
            raise DataError(f"{where}: invalid rainfall value {v!r} at flat index {k}")
    try:
        return RadarGrid(
            origin=GeoPoint(doc["origin"]["lat"], doc["origin"]["lon"]),
            cell_size_deg=tuple(doc["cell_size_deg"]),
            rows=int(doc["rows"]),
            cols=int(doc["cols"]),
            values=np.asarray(flat, dtype=float),
            window_start=_parse_time(doc["window_start"]),
        )
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_radar_grid(grid: RadarGrid, path) -> None:
    """Write one value row per line so parse errors can name a line."""
    head = {
        "origin": {"lat": grid.origin.lat, "lon": grid.origin.lon},
        "cell_size_deg": list(grid.cell_size_deg),
        "rows": grid.rows,
        "cols": grid.cols,
        "window_start": format_time(grid.window_start),
    }
    parts = [json.dumps(head)[:-1] + ', "values": [']
    rows = [json.dumps([float(x) for x in row]) for row in grid.values]
    parts.append(",\n".join(rows))
    parts.append("]}\n")
    Path(path).write_text("\n".join(parts))


# ---------------------------------------------------------------------------
# Label binning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabelBinning:
    min_val: float
    max_val: float
    r: int

    def __post_init__(self) -> None:
        if not self.min_val < self.max_val:
            raise DataError(f"binning needs min < max, got [{self.min_val}, {self.max_val}]")
        if self.r < 2:
            raise DataError(f"need at least 2 classes, got {self.r}")

    @classmethod
    def fit(cls, values, r: int) -> "LabelBinning":
        vals = np.concatenate([np.ravel(np.asarray(v, dtype=float)) for v in values]) \
            if isinstance(values, (list, tuple)) else np.ravel(np.asarray(values, dtype=float))
        return cls(float(vals.min()), float(vals.max()), r)


def bin_labels(b: LabelBinning, v) -> np.ndarray:
    """Equal-width classes; the last interval is closed at ``max_val``."""
    v = np.asarray(v, dtype=float)
    if np.any(v < b.min_val) or np.any(v > b.max_val) or not np.all(np.isfinite(v)):
        bad = v[(v < b.min_val) | (v > b.max_val) | ~np.isfinite(v)].ravel()[0]
        raise DataError(f"value {bad} outside fitted label range [{b.min_val}, {b.max_val}]")
    cls = np.floor(b.r * (v - b.min_val) / (b.max_val - b.min_val)).astype(np.int64)
    return np.minimum(cls, b.r - 1)


def bin_label(b: LabelBinning, v: float) -> int:
    return int(bin_labels(b, v))
