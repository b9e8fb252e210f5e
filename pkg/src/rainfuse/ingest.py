"""CSV ingestion for gage, radar, weather-station, and elevation inputs.

File schemas (header row required, UTF-8, LF, decimal text, empty field =
missing):

    gage.csv   station_id,lon,lat,t,rain
    radar.csv  x,y,t,ze
    aws.csv    station_id,lon,lat,t,temp_c,rh_pct,wind_u,wind_v
    dem.csv    x,y,elev_m

Zero is a recorded value, distinct from missing: the model treats them
differently.  Malformed rows are rejected with row-numbered diagnostics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .grid import Grid


class IngestError(ValueError):
    """Raised with one diagnostic line per offending input row."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


@dataclass(frozen=True)
class GageRecord:
    station_id: str
    lon: float
    lat: float
    t: int
    rain: float | None  # mm/h; None = missing
    cell: int = -1

    @property
    def missing(self) -> bool:
        return self.rain is None


@dataclass(frozen=True)
class RadarRecord:
    x: int
    y: int
    t: int
    reflectivity: float | None  # Ze in the working (file) units; None = missing

    @property
    def missing(self) -> bool:
        return self.reflectivity is None


@dataclass(frozen=True)
class StationRecord:
    station_id: str
    lon: float
    lat: float
    t: int
    temp_c: float
    rh_pct: float
    wind_u: float
    wind_v: float


@dataclass(frozen=True)
class ObservationSet:
    gages: tuple[GageRecord, ...]
    radar_ze: np.ndarray  # (T, n); NaN = missing, 0 = recorded zero
    stations: tuple[StationRecord, ...]
    elevation: np.ndarray  # (n,) meters
    T: int

    def radar_record(self, grid: Grid, x: int, y: int, t: int) -> RadarRecord:
        v = self.radar_ze[t, grid.index(x, y)]
        return RadarRecord(x=x, y=y, t=t, reflectivity=None if math.isnan(v) else float(v))

    def n_radar_observed(self) -> int:
        return int(np.sum(~np.isnan(self.radar_ze)))


@dataclass(frozen=True)
class InputPaths:
    gage: Path
    radar: Path
    aws: Path
    dem: Path

    @classmethod
    def in_dir(cls, d: Path | str) -> "InputPaths":
        d = Path(d)
        return cls(gage=d / "gage.csv", radar=d / "radar.csv", aws=d / "aws.csv", dem=d / "dem.csv")


def _fmt(v) -> str:
    return repr(float(v))


def _read_rows(path: Path, header: list[str], diags: list[str]):
    try:
        f = open(path, newline="", encoding="utf-8")
    except OSError as e:
        diags.append(f"{path}: cannot open ({e})")
        return
    with f:
        reader = csv.reader(f)
        try:
            got = next(reader)
        except StopIteration:
            diags.append(f"{path}:1: missing header row")
            return
        if got != header:
            diags.append(f"{path}:1: header {got!r} does not match {header!r}")
            return
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                diags.append(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                continue
            yield lineno, row


def _float(s: str, path, lineno, name, diags) -> float | None:
    try:
        v = float(s)
    except ValueError:
        diags.append(f"{path}:{lineno}: unparseable {name} {s!r}")
        return None
    if not math.isfinite(v):
        diags.append(f"{path}:{lineno}: non-finite {name}")
        return None
    return v


def _int(s: str, path, lineno, name, diags) -> int | None:
    try:
        return int(s)
    except ValueError:
        diags.append(f"{path}:{lineno}: unparseable {name} {s!r}")
        return None


def load_observations(paths: InputPaths, grid: Grid, n_times: int | None = None) -> ObservationSet:
    """Parse and validate all four inputs into an ObservationSet.

    Every record is mapped to a grid cell; any malformed row, out-of-grid
    coordinate, or negative rain/reflectivity is reported (all offending
    rows at once) via IngestError.
    """
    diags: list[str] = []
    gages: list[GageRecord] = []
    radar_rows: list[tuple[int, int, int, float]] = []
    radar_seen: set[tuple[int, int, int]] = set()
    stations: list[StationRecord] = []
    max_t = -1

    for lineno, row in _read_rows(paths.gage, ["station_id", "lon", "lat", "t", "rain"], diags):
        sid, lon_s, lat_s, t_s, rain_s = row
        lon = _float(lon_s, paths.gage, lineno, "lon", diags)
        lat = _float(lat_s, paths.gage, lineno, "lat", diags)
        t = _int(t_s, paths.gage, lineno, "t", diags)
        if lon is None or lat is None or t is None:
            continue
        if t < 0:
            diags.append(f"{paths.gage}:{lineno}: negative time index {t}")
            continue
        rain: float | None = None
        if rain_s != "":
            rain = _float(rain_s, paths.gage, lineno, "rain", diags)
            if rain is None:
                continue
            if rain < 0:
                diags.append(f"{paths.gage}:{lineno}: negative rain {rain}")
                continue
        if not grid.contains_lonlat(lon, lat):
            diags.append(f"{paths.gage}:{lineno}: gage {sid!r} at ({lon}, {lat}) outside grid")
            continue
        cell = grid.cell_of_lonlat(lon, lat)
        gages.append(GageRecord(station_id=sid, lon=lon, lat=lat, t=t, rain=rain, cell=cell))
        max_t = max(max_t, t)

    for lineno, row in _read_rows(paths.radar, ["x", "y", "t", "ze"], diags):
        x_s, y_s, t_s, ze_s = row
        x = _int(x_s, paths.radar, lineno, "x", diags)
        y = _int(y_s, paths.radar, lineno, "y", diags)
        t = _int(t_s, paths.radar, lineno, "t", diags)
        if x is None or y is None or t is None:
            continue
        if not (0 <= x < grid.nx and 0 <= y < grid.ny):
            diags.append(f"{paths.radar}:{lineno}: cell ({x}, {y}) outside {grid.nx}x{grid.ny} grid")
            continue
        if t < 0:
            diags.append(f"{paths.radar}:{lineno}: negative time index {t}")
            continue
        if (x, y, t) in radar_seen:
            diags.append(f"{paths.radar}:{lineno}: duplicate radar row for ({x}, {y}, {t})")
            continue
        radar_seen.add((x, y, t))
        if ze_s == "":
            ze = math.nan
        else:
            v = _float(ze_s, paths.radar, lineno, "ze", diags)
            if v is None:
                continue
            if v < 0:
                diags.append(f"{paths.radar}:{lineno}: negative reflectivity {v}")
                continue
            ze = v
        radar_rows.append((x, y, t, ze))
        max_t = max(max_t, t)

    header = ["station_id", "lon", "lat", "t", "temp_c", "rh_pct", "wind_u", "wind_v"]
    for lineno, row in _read_rows(paths.aws, header, diags):
        sid = row[0]
        vals = [_float(row[j], paths.aws, lineno, header[j], diags) for j in range(1, 8)]
        if any(v is None for v in vals):
            continue
        lon, lat, t_f, temp, rh, wu, wv = vals
        t = int(t_f)
        if t != t_f or t < 0:
            diags.append(f"{paths.aws}:{lineno}: bad time index {row[3]!r}")
            continue
        if not 0.0 <= rh <= 100.0:
            diags.append(f"{paths.aws}:{lineno}: relative humidity {rh} outside [0, 100]")
            continue
        stations.append(
            StationRecord(station_id=sid, lon=lon, lat=lat, t=t,
                          temp_c=temp, rh_pct=rh, wind_u=wu, wind_v=wv)
        )
        max_t = max(max_t, t)

    elev = np.full(grid.n, math.nan)
    for lineno, row in _read_rows(paths.dem, ["x", "y", "elev_m"], diags):
        x = _int(row[0], paths.dem, lineno, "x", diags)
        y = _int(row[1], paths.dem, lineno, "y", diags)
        e = _float(row[2], paths.dem, lineno, "elev_m", diags)
        if x is None or y is None or e is None:
            continue
        if not (0 <= x < grid.nx and 0 <= y < grid.ny):
            diags.append(f"{paths.dem}:{lineno}: cell ({x}, {y}) outside grid")
            continue
        i = grid.index(x, y)
        if not math.isnan(elev[i]):
            diags.append(f"{paths.dem}:{lineno}: duplicate elevation for ({x}, {y})")
            continue
        elev[i] = e
    n_missing = int(np.sum(np.isnan(elev)))
    if n_missing:
        diags.append(f"{paths.dem}: elevation missing for {n_missing} of {grid.n} cells")

    if n_times is not None:
        T = n_times
        if max_t >= T:
            diags.append(f"time index {max_t} outside configured range [0, {T})")
    else:
        T = max_t + 1 if max_t >= 0 else 1

    if diags:
        raise IngestError(diags)

    radar_ze = np.full((T, grid.n), math.nan)
    for x, y, t, ze in radar_rows:
        radar_ze[t, grid.index(x, y)] = ze

    return ObservationSet(
        gages=tuple(gages),
        radar_ze=radar_ze,
        stations=tuple(stations),
        elevation=elev,
        T=T,
    )


def write_observations(obs: ObservationSet, paths: InputPaths, grid: Grid) -> None:
    """Write an ObservationSet back to the four CSV schemas (round-trips)."""
    for p in (paths.gage, paths.radar, paths.aws, paths.dem):
        Path(p).parent.mkdir(parents=True, exist_ok=True)
    with open(paths.gage, "w", newline="\n", encoding="utf-8") as f:
        f.write("station_id,lon,lat,t,rain\n")
        for g in obs.gages:
            rain = "" if g.rain is None else _fmt(g.rain)
            f.write(f"{g.station_id},{_fmt(g.lon)},{_fmt(g.lat)},{g.t},{rain}\n")
    with open(paths.radar, "w", newline="\n", encoding="utf-8") as f:
        f.write("x,y,t,ze\n")
        for t in range(obs.T):
            for i in range(grid.n):
                x, y = grid.coords(i)
                v = obs.radar_ze[t, i]
                f.write(f"{x},{y},{t},{'' if math.isnan(v) else _fmt(v)}\n")
    with open(paths.aws, "w", newline="\n", encoding="utf-8") as f:
        f.write("station_id,lon,lat,t,temp_c,rh_pct,wind_u,wind_v\n")
        for s in obs.stations:
            f.write(
                f"{s.station_id},{_fmt(s.lon)},{_fmt(s.lat)},{s.t},"
                f"{_fmt(s.temp_c)},{_fmt(s.rh_pct)},{_fmt(s.wind_u)},{_fmt(s.wind_v)}\n"
            )
    with open(paths.dem, "w", newline="\n", encoding="utf-8") as f:
        f.write("x,y,elev_m\n")
        for i in range(grid.n):
            x, y = grid.coords(i)
            f.write(f"{x},{y},{_fmt(obs.elevation[i])}\n")


def screen_gage_zeros(obs: ObservationSet, grid: Grid) -> tuple[ObservationSet, int]:
    """Flag suspect zero-rain gage values by comparison with nearby radar.

    For each gage record with rain exactly 0, inspect the 3x3 radar block
    centered on the gage's cell (clipped at the domain edge); if at least 3
    of the available pixels have nonzero reflectivity the gage value is
    replaced with missing.  Nonzero and missing records pass through
    unchanged.  Returns the new set and the number of flagged records.
    """
    out: list[GageRecord] = []
    flagged = 0
    for g in obs.gages:
        if g.rain is None or g.rain != 0.0:
            out.append(g)
            continue
        x0, y0 = grid.coords(g.cell)
        nonzero = 0
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                x, y = x0 + dx, y0 + dy
                if 0 <= x < grid.nx and 0 <= y < grid.ny:
                    v = obs.radar_ze[g.t, grid.index(x, y)]
                    if not math.isnan(v) and v > 0.0:
                        nonzero += 1
        if nonzero >= 3:
            out.append(replace(g, rain=None))
            flagged += 1
        else:
            out.append(g)
    return replace(obs, gages=tuple(out)), flagged


def standard_zr(r: float) -> float:
    """Reference conversion Ze = 200 * R^1.6 (plots and sanity checks only)."""
    if r < 0:
        raise ValueError(f"rainfall must be nonnegative, got {r}")
    return 200.0 * r**1.6
