"""Station covariates interpolated to the grid (thin plate splines + GCV).

Each of temperature, relative humidity, and the two wind components is
smoothed per time step with a low-rank thin plate spline whose basis size
and smoothing parameter are chosen by generalized cross-validation.  The
resulting fields are fixed inputs to the Bayesian stages: interpolation
uncertainty is deliberately not propagated.

Regression covariates (temp, rh, elevation, and the temporal gradients)
are standardized per time step over cells; wind is kept in physical m/s
because it enters the displacement model directly.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import Grid

DEFAULT_CANDIDATES: tuple[tuple[int, float], ...] = tuple(
    (m, lam) for m in (9, 16, 25, 36) for lam in (0.0, 1e-4, 1e-2, 1.0)
)

_SD_FLOOR = 1e-12


@dataclass(frozen=True)
class TpsModel:
    """Low-rank thin plate spline: r^2 log r kernel at knots plus affine part."""

    knots: np.ndarray          # (m, 2) in normalized coordinates
    coef_kernel: np.ndarray    # (m,) kernel coefficients, orthogonal to affine
    coef_affine: np.ndarray    # (3,) intercept, x, y
    lam: float
    m: int
    offset: np.ndarray         # (2,) normalization offset (lon, lat)
    scale: np.ndarray          # (2,) normalization scale


def _tps_kernel(d2: np.ndarray) -> np.ndarray:
    # eta(r) = r^2 log r, continuous at 0
    out = np.zeros_like(d2)
    pos = d2 > 0
    out[pos] = 0.5 * d2[pos] * np.log(d2[pos])
    return out


def _pairwise_d2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _normalize(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    offset = points.min(axis=0)
    scale = points.max(axis=0) - offset
    scale = np.where(scale < _SD_FLOOR, 1.0, scale)
    return (points - offset) / scale, offset, scale


def _select_knots(pts: np.ndarray, m: int) -> np.ndarray:
    """Farthest-point knot subset, deterministic given input order."""
    n = pts.shape[0]
    if m >= n:
        return np.arange(n)
    centroid = pts.mean(axis=0)
    first = int(np.argmin(np.sum((pts - centroid) ** 2, axis=1)))
    chosen = [first]
    mind = np.sum((pts - pts[first]) ** 2, axis=1)
    while len(chosen) < m:
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return np.asarray(chosen)


def _design(points: np.ndarray, values: np.ndarray, m: int, lam: float):
    """Shared setup for fitting and GCV scoring.

    Returns (X, penalty_root, Z, knots, norm) where the working coefficient
    vector is (b, a) with kernel part c = Z b constrained orthogonal to the
    affine space at the knots.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    n = points.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if m < 3:
        raise ValueError(f"basis size must be >= 3, got m={m}")
    if m > n:
        raise ValueError(f"basis size m={m} exceeds number of points {n}")
    pts, offset, scale = _normalize(points)
    T = np.column_stack([np.ones(n), pts])
    if np.linalg.matrix_rank(T) < 3:
        raise ValueError("points are collinear: thin plate spline system is rank deficient")
    knot_idx = _select_knots(pts, m)
    knots = pts[knot_idx]
    E = _tps_kernel(_pairwise_d2(pts, knots))
    K = _tps_kernel(_pairwise_d2(knots, knots))
    Tq = np.column_stack([np.ones(m), knots])
    # orthonormal basis of the null space of Tq'
    q, _ = np.linalg.qr(Tq, mode="complete")
    Z = q[:, 3:]
    X = np.column_stack([E @ Z, T])
    M = Z.T @ K @ Z
    M = 0.5 * (M + M.T)
    try:
        root = np.linalg.cholesky(M + 1e-12 * max(np.trace(M) / max(m - 3, 1), 1.0) * np.eye(m - 3)).T
    except np.linalg.LinAlgError as e:
        raise ValueError("degenerate knot configuration (rank-deficient penalty)") from e
    return X, root, Z, knots, (offset, scale), values


def tps_fit(points, values, m: int, lam: float) -> TpsModel:
    """Fit the penalized low-rank TPS; reproduces affine surfaces exactly."""
    if lam < 0:
        raise ValueError(f"smoothing parameter must be >= 0, got {lam}")
    X, root, Z, knots, (offset, scale), y = _design(points, values, m, lam)
    n_b = Z.shape[1]
    if lam > 0 and n_b > 0:
        aug = np.vstack([X, np.column_stack([np.sqrt(lam) * root, np.zeros((n_b, 3))])])
        rhs = np.concatenate([y, np.zeros(n_b)])
    else:
        aug, rhs = X, y
    theta, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    b, a = theta[:n_b], theta[n_b:]
    return TpsModel(
        knots=knots, coef_kernel=Z @ b, coef_affine=a, lam=lam, m=m,
        offset=offset, scale=scale,
    )


def tps_eval(model: TpsModel, points: np.ndarray) -> np.ndarray:
    pts = (np.asarray(points, dtype=float) - model.offset) / model.scale
    E = _tps_kernel(_pairwise_d2(pts, model.knots))
    T = np.column_stack([np.ones(pts.shape[0]), pts])
    return E @ model.coef_kernel + T @ model.coef_affine


def tps_predict(model: TpsModel, grid: Grid) -> np.ndarray:
    """Field evaluated at every cell center."""
    centers = np.array([grid.cell_center_lonlat(i) for i in range(grid.n)])
    return tps_eval(model, centers)


def _gcv_score(points, values, m: int, lam: float) -> float | None:
    """GCV(lam, m) = n ||(I-A)y||^2 / tr(I-A)^2, or None if A is saturated."""
    X, root, _, _, _, y = _design(points, values, m, lam)
    n = y.shape[0]
    n_b = root.shape[0]
    P = np.zeros((X.shape[1], X.shape[1]))
    if lam > 0 and n_b > 0:
        P[:n_b, :n_b] = lam * (root.T @ root)
    XtX = X.T @ X
    theta = np.linalg.lstsq(XtX + P, X.T @ y, rcond=None)[0]
    rss = float(np.sum((y - X @ theta) ** 2))
    tr_a = float(np.trace(np.linalg.lstsq(XtX + P, XtX, rcond=None)[0]))
    denom = n - tr_a
    if denom <= 1e-8 * n:
        return None
    return n * rss / denom**2


def gcv_select(points, values, candidates) -> tuple[int, float]:
    """Candidate (m, lam) minimizing GCV; ties go to smaller m then smaller lam.

    Saturated smoothers (tr(I-A) ~ 0) are skipped with a warning; an error
    is raised only if every candidate is skipped.
    """
    cands = sorted({(int(m), float(lam)) for m, lam in candidates})
    if not cands:
        raise ValueError("no candidates supplied")
    scored: list[tuple[tuple[int, float], float]] = []
    for cand in cands:
        g = _gcv_score(points, values, cand[0], cand[1])
        if g is None:
            warnings.warn(f"GCV candidate m={cand[0]}, lambda={cand[1]} saturated; skipped")
            continue
        scored.append((cand, g))
    if not scored:
        raise ValueError("all GCV candidates were saturated")
    gmin = min(g for _, g in scored)
    tol = 1e-9 * (abs(gmin) + float(np.mean(np.square(values))) + 1e-30)
    for cand, g in scored:  # already in (m, lam) order
        if g <= gmin + tol:
            return cand
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class CovariateFields:
    """Gridded covariates per time step plus the standardized design arrays.

    x_mean1 columns: intercept, temp(1), rh(1), elevation (standardized).
    x_dyn columns per t >= 1: intercept, elevation, dtemp(t), drh(t).
    """

    grid: Grid
    temp: np.ndarray      # (T, n) raw
    rh: np.ndarray        # (T, n) raw
    wind_u: np.ndarray    # (T, n) m/s
    wind_v: np.ndarray    # (T, n) m/s
    elev: np.ndarray      # (n,) raw meters
    dtemp: np.ndarray     # (T, n) raw temp(t) - temp(t-1); row 0 is zero
    drh: np.ndarray       # (T, n)
    x_mean1: np.ndarray = field(repr=False)   # (n, 4)
    x_dyn: np.ndarray = field(repr=False)     # (T, n, 4); row 0 unused
    transforms: dict = field(repr=False)      # name -> (T, 2) array of (mean, scale)

    @property
    def T(self) -> int:
        return self.temp.shape[0]

    def standardized(self, name: str, t: int) -> np.ndarray:
        raw = {"temp": self.temp, "rh": self.rh, "dtemp": self.dtemp, "drh": self.drh,
               "u": self.wind_u, "v": self.wind_v}
        if name == "elev":
            mean, scale = self.transforms["elev"][0]
            return (self.elev - mean) / scale
        mean, scale = self.transforms[name][t]
        return (raw[name][t] - mean) / scale

    @classmethod
    def from_raw(cls, grid: Grid, temp, rh, wind_u, wind_v, elev) -> "CovariateFields":
        temp, rh = np.asarray(temp, float), np.asarray(rh, float)
        wind_u, wind_v = np.asarray(wind_u, float), np.asarray(wind_v, float)
        elev = np.asarray(elev, float)
        T, n = temp.shape
        if n != grid.n:
            raise ValueError(f"fields have {n} cells, grid has {grid.n}")
        for name, arr in (("temp", temp), ("rh", rh), ("wind_u", wind_u),
                          ("wind_v", wind_v), ("elev", elev)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in covariate field {name!r}")
        dtemp = np.zeros_like(temp)
        drh = np.zeros_like(rh)
        dtemp[1:] = temp[1:] - temp[:-1]
        drh[1:] = rh[1:] - rh[:-1]

        def col_transform(rows: np.ndarray) -> np.ndarray:
            mean = rows.mean(axis=1)
            sd = rows.std(axis=1)
            sd = np.where(sd < _SD_FLOOR, 1.0, sd)
            return np.column_stack([mean, sd])

        transforms = {
            "temp": col_transform(temp),
            "rh": col_transform(rh),
            "dtemp": col_transform(dtemp),
            "drh": col_transform(drh),
            # wind enters the shift model in physical units; identity transform
            "u": np.column_stack([np.zeros(T), np.ones(T)]),
            "v": np.column_stack([np.zeros(T), np.ones(T)]),
            "elev": col_transform(elev[None, :]),
        }
        e_mean, e_sd = transforms["elev"][0]
        elev_std = (elev - e_mean) / e_sd
        x_mean1 = np.column_stack([
            np.ones(n),
            (temp[0] - transforms["temp"][0, 0]) / transforms["temp"][0, 1],
            (rh[0] - transforms["rh"][0, 0]) / transforms["rh"][0, 1],
            elev_std,
        ])
        x_dyn = np.zeros((T, n, 4))
        for t in range(1, T):
            x_dyn[t] = np.column_stack([
                np.ones(n),
                elev_std,
                (dtemp[t] - transforms["dtemp"][t, 0]) / transforms["dtemp"][t, 1],
                (drh[t] - transforms["drh"][t, 0]) / transforms["drh"][t, 1],
            ])
        return cls(grid=grid, temp=temp, rh=rh, wind_u=wind_u, wind_v=wind_v,
                   elev=elev, dtemp=dtemp, drh=drh, x_mean1=x_mean1, x_dyn=x_dyn,
                   transforms=transforms)


def build_covariates(obs, grid: Grid, candidates=None) -> CovariateFields:
    """Stage 0: fit + predict each covariate per time step with GCV selection."""
    if candidates is None:
        candidates = DEFAULT_CANDIDATES
    T = obs.T
    by_t: dict[int, list] = {t: [] for t in range(T)}
    for s in obs.stations:
        if s.t < T:
            by_t[s.t].append(s)
    fields = {name: np.zeros((T, grid.n)) for name in ("temp", "rh", "u", "v")}
    getters = {"temp": lambda s: s.temp_c, "rh": lambda s: s.rh_pct,
               "u": lambda s: s.wind_u, "v": lambda s: s.wind_v}
    for t in range(T):
        stations = by_t[t]
        if len(stations) < 3:
            raise ValueError(f"time step {t} has {len(stations)} stations; need at least 3")
        pts = np.array([(s.lon, s.lat) for s in stations])
        usable = [(m, lam) for m, lam in candidates if 3 <= m <= len(stations)]
        if not usable:
            usable = [(len(stations), lam) for _, lam in candidates]
        for name, get in getters.items():
            vals = np.array([get(s) for s in stations])
            m, lam = gcv_select(pts, vals, usable)
            fields[name][t] = tps_predict(tps_fit(pts, vals, m, lam), grid)
    return CovariateFields.from_raw(
        grid, fields["temp"], fields["rh"], fields["u"], fields["v"], obs.elevation
    )


def write_covariates(cov: CovariateFields, path: Path | str, transforms_path: Path | str) -> None:
    """Export standardized fields plus the sidecar of means/scales."""
    path, transforms_path = Path(path), Path(transforms_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = cov.grid
    names = ["temp", "rh", "u", "v", "elev", "dtemp", "drh"]
    std = {name: np.stack([cov.standardized(name, t) for t in range(cov.T)])
           if name != "elev" else None for name in names}
    elev_std = cov.standardized("elev", 0)
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write("x,y,t,temp,rh,u,v,elev,dtemp,drh\n")
        for t in range(cov.T):
            for i in range(grid.n):
                x, y = grid.coords(i)
                row = [std["temp"][t, i], std["rh"][t, i], std["u"][t, i], std["v"][t, i],
                       elev_std[i], std["dtemp"][t, i], std["drh"][t, i]]
                f.write(f"{x},{y},{t}," + ",".join(repr(float(v)) for v in row) + "\n")
    with open(transforms_path, "w", newline="\n", encoding="utf-8") as f:
        f.write("column,t,mean,scale\n")
        for name in names:
            rows = cov.transforms[name]
            for t in range(rows.shape[0]):
                f.write(f"{name},{t},{rows[t, 0]!r},{rows[t, 1]!r}\n")


def load_covariates(path: Path | str, transforms_path: Path | str, grid: Grid) -> CovariateFields:
    """Rebuild CovariateFields from the covariates.csv export."""
    transforms: dict[str, dict[int, tuple[float, float]]] = {}
    with open(transforms_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            transforms.setdefault(row["column"], {})[int(row["t"])] = (
                float(row["mean"]), float(row["scale"]))
    raw: dict[str, dict[tuple[int, int], float]] = {k: {} for k in
        ("temp", "rh", "u", "v", "elev")}
    max_t = 0
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            t, i = int(row["t"]), grid.index(int(row["x"]), int(row["y"]))
            max_t = max(max_t, t)
            for name in ("temp", "rh", "u", "v"):
                mean, scale = transforms[name][t]
                raw[name][(t, i)] = float(row[name]) * scale + mean
            e_mean, e_scale = transforms["elev"][0]
            raw["elev"][(0, i)] = float(row["elev"]) * e_scale + e_mean
    T = max_t + 1
    arrays = {name: np.zeros((T, grid.n)) for name in ("temp", "rh", "u", "v")}
    elev = np.zeros(grid.n)
    for name in ("temp", "rh", "u", "v"):
        for (t, i), v in raw[name].items():
            arrays[name][t, i] = v
    for (_, i), v in raw["elev"].items():
        elev[i] = v
    return CovariateFields.from_raw(grid, arrays["temp"], arrays["rh"],
                                    arrays["u"], arrays["v"], elev)
