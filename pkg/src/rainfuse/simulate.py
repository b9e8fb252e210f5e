"""Forward generator of synthetic gage + radar + covariate datasets.

Reads the hierarchy generatively: latent fields from the CAR prior and the
displacement dynamics, then gage and radar observations from the
zero-inflated mixtures.  Deterministic given the scenario seed; used as
the verification oracle for inference.

Covariates are generated as smooth random surfaces (low-order spline
coefficients drawn once per scenario) rather than from station files, so
the station-interpolation stage is exercised separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .car import CarSpec, sample_car, sample_car_many
from .covariates import CovariateFields
from .grid import Grid, cells_per_ms
from .ingest import GageRecord, ObservationSet, StationRecord
from .model import ModelState, source_cells
from .products import LatentFieldSpec, latent_spec_from_state
from .splines import tensor_basis


def default_true_state(grid: Grid, T: int = 3, k_bias: int = 3, k_shift: int = 3) -> ModelState:
    """Published posterior medians reused as simulation truths.

    c2 = 1.05, alpha = 0.39, radar logistic (-2.81, -1.69), gage logistic
    (-0.23, -0.17); the additive bias surface varies gently around log 200.
    """
    kb2, ks2 = k_bias * k_bias, k_shift * k_shift
    c1 = np.full(kb2, math.log(200.0))
    if kb2 >= 9:
        ramp = np.linspace(-0.3, 0.3, kb2)
        c1 = c1 + ramp
    bs1 = np.zeros((T - 1, ks2))
    bs2 = np.zeros((T - 1, ks2))
    if ks2 >= 9:
        for m in range(T - 1):
            bs1[m] = 0.2 * np.sin(np.arange(ks2) * 1.3 + m)
            bs2[m] = 0.2 * np.cos(np.arange(ks2) * 0.9 + m)
    return ModelState(
        y=np.zeros((T, grid.n)),
        beta1_mean=np.array([0.5, 0.35, 0.25, -0.15]),
        beta_dyn=np.array([0.10, -0.05, 0.10, 0.05]),
        rho_y=0.90, rho=0.70,
        tau2_y=2.0, tau2_eps=np.full(max(T - 1, 0), 3.0),
        a_g=-0.23, b_g=-0.17, a_r=-2.81, b_r=-1.69,
        c1_gamma=c1, c2=1.05,
        sigma2_g=0.04, sigma2_r=0.25,
        alpha_shift=0.39,
        beta_shift1=bs1, beta_shift2=bs2,
    )


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to generate one synthetic dataset."""

    grid: Grid
    T: int
    state: ModelState            # truth; the y field is ignored and redrawn
    n_gages: int = 12
    placement: str = "grid"      # 'grid' | 'uniform'
    wind: str = "bumpy:10,0,4,2,1.5"
    seed: int = 0
    force_rain: bool = False     # zero probabilities forced to 0 (noise-free checks)


def default_scenario(seed: int = 0, nx: int = 20, ny: int = 20, T: int = 3,
                     n_gages: int = 12, **kw) -> ScenarioSpec:
    grid = Grid(nx=nx, ny=ny, cell_size_km=1.0, origin_lon=126.5, origin_lat=37.2,
                dt_minutes=10.0)
    return ScenarioSpec(grid=grid, T=T, state=default_true_state(grid, T),
                        n_gages=n_gages, seed=seed, **kw)


def _wind_fields(descriptor: str, grid: Grid, T: int) -> tuple[np.ndarray, np.ndarray]:
    kind, _, args = descriptor.partition(":")
    vals = [float(v) for v in args.split(",")] if args else []
    n = grid.n
    xs = (np.arange(n) % grid.nx + 0.5) / grid.nx
    ys = (np.arange(n) // grid.nx + 0.5) / grid.ny
    if kind == "constant":
        u0, v0 = vals
        u = np.full((T, n), u0)
        v = np.full((T, n), v0)
    elif kind == "rotating":
        (speed,) = vals
        theta = np.arctan2(ys - 0.5, xs - 0.5)
        u = np.tile(-speed * np.sin(theta), (T, 1))
        v = np.tile(speed * np.cos(theta), (T, 1))
    elif kind == "sheared":
        u0, v0, du, dv = vals
        u = np.tile(u0 + du * (xs - 0.5), (T, 1))
        v = np.tile(v0 + dv * (ys - 0.5), (T, 1))
    elif kind == "bumpy":
        # shear plus two harmonics; the finer one sits well outside the span
        # of a small tensor spline, which keeps the wind coefficient of the
        # shift model identified instead of being absorbed by the spline
        u0, v0, du, dv, amp = vals
        bump_u = amp * (np.sin(3.0 * np.pi * xs) * np.sin(2.0 * np.pi * ys)
                        + 0.8 * np.sin(5.0 * np.pi * xs + 1.0) * np.sin(4.0 * np.pi * ys + 0.5))
        bump_v = amp * (np.cos(2.0 * np.pi * xs) * np.sin(3.0 * np.pi * ys)
                        + 0.8 * np.cos(4.0 * np.pi * xs + 0.7) * np.sin(5.0 * np.pi * ys + 0.3))
        u = np.tile(u0 + du * (xs - 0.5) + bump_u, (T, 1))
        v = np.tile(v0 + dv * (ys - 0.5) + bump_v, (T, 1))
    else:
        raise ValueError(f"unknown wind scenario {descriptor!r}")
    return u, v


def make_covariates(spec: ScenarioSpec, rng: np.random.Generator) -> CovariateFields:
    """Smooth random covariate surfaces plus the scenario wind fields."""
    grid, T = spec.grid, spec.T
    basis = tensor_basis(grid, 3)
    k2 = basis.n_components

    def surface_series(level, spread, drift_sd):
        coef = rng.normal(level, spread, k2)
        drift = rng.normal(0.0, drift_sd, k2)
        return np.stack([basis.surface(coef + t * drift) for t in range(T)])

    temp = surface_series(20.0, 2.5, 0.4)
    rh = np.clip(surface_series(70.0, 8.0, 1.5), 0.0, 100.0)
    elev = np.maximum(basis.surface(rng.normal(220.0, 120.0, k2)), 0.0)
    wind_u, wind_v = _wind_fields(spec.wind, grid, T)
    return CovariateFields.from_raw(grid, temp, rh, wind_u, wind_v, elev)


def gage_positions(spec: ScenarioSpec, rng: np.random.Generator) -> list[tuple[float, float]]:
    grid = spec.grid
    lo_lon, lo_lat, hi_lon, hi_lat = grid.lonlat_bounds()
    pts = []
    if spec.placement == "uniform":
        for _ in range(spec.n_gages):
            pts.append((float(rng.uniform(lo_lon, hi_lon)), float(rng.uniform(lo_lat, hi_lat))))
    elif spec.placement == "grid":
        k_x = max(1, int(round(math.sqrt(spec.n_gages * grid.nx / grid.ny))))
        k_y = max(1, -(-spec.n_gages // k_x))
        made = 0
        for iy in range(k_y):
            for ix in range(k_x):
                if made >= spec.n_gages:
                    break
                lon = lo_lon + (ix + 0.5) / k_x * (hi_lon - lo_lon)
                lat = lo_lat + (iy + 0.5) / k_y * (hi_lat - lo_lat)
                pts.append((lon, lat))
                made += 1
    else:
        raise ValueError(f"unknown placement rule {spec.placement!r}")
    return pts


def draw_latent(
    rng: np.random.Generator, state: ModelState, cov: CovariateFields
) -> np.ndarray:
    """Y(1) from the CAR prior, then the displacement dynamics forward."""
    grid = cov.grid
    T = cov.T
    k_shift = int(math.isqrt(state.beta_shift1.shape[1])) if state.beta_shift1.size else 1
    basis = tensor_basis(grid, k_shift)
    y = np.zeros((T, grid.n))
    y[0] = sample_car(rng, cov.x_mean1 @ state.beta1_mean,
                      CarSpec(grid, state.rho_y, state.tau2_y))
    for t in range(1, T):
        src = source_cells(t, cov, basis, state)
        mean = state.rho * y[t - 1][src] + cov.x_dyn[t] @ state.beta_dyn
        y[t] = mean + sample_car(rng, np.zeros(grid.n),
                                 CarSpec(grid, state.rho_y, float(state.tau2_eps[t - 1])))
    return y


@dataclass(frozen=True)
class SimulatedData:
    obs: ObservationSet
    cov: CovariateFields
    y_true: np.ndarray          # (T, n)
    state: ModelState           # truth with y_true attached
    gage_lonlat: tuple = ()


def draw_observations(
    rng: np.random.Generator,
    state: ModelState,
    cov: CovariateFields,
    positions: list[tuple[float, float]],
    force_rain: bool = False,
) -> ObservationSet:
    """Gage + radar observations from the zero-inflated mixtures given Y."""
    grid, T = cov.grid, cov.T
    y = state.y
    k_bias = int(math.isqrt(state.c1_gamma.shape[0]))
    c1 = tensor_basis(grid, k_bias).surface(state.c1_gamma)
    sd_r = math.sqrt(state.sigma2_r)
    pi_r = expit(state.a_r + state.b_r * y)
    if force_rain:
        pi_r = np.zeros_like(pi_r)
    zero_r = rng.random((T, grid.n)) < pi_r
    noise_r = rng.standard_normal((T, grid.n)) * sd_r
    radar = np.exp(c1[None, :] + state.c2 * y + noise_r)
    radar[zero_r] = 0.0

    sd_g = math.sqrt(state.sigma2_g)
    gages: list[GageRecord] = []
    stations: list[StationRecord] = []
    for t in range(T):
        for k, (lon, lat) in enumerate(positions):
            cell = grid.cell_of_lonlat(lon, lat)
            sid = f"g{k:03d}"
            pi = 0.0 if force_rain else float(expit(state.a_g + state.b_g * y[t, cell]))
            if rng.random() < pi:
                rain = 0.0
            else:
                rain = float(np.exp(y[t, cell] + rng.standard_normal() * sd_g))
            gages.append(GageRecord(station_id=sid, lon=lon, lat=lat, t=t,
                                    rain=rain, cell=cell))
            stations.append(StationRecord(
                station_id=sid, lon=lon, lat=lat, t=t,
                temp_c=float(cov.temp[t, cell]), rh_pct=float(cov.rh[t, cell]),
                wind_u=float(cov.wind_u[t, cell]), wind_v=float(cov.wind_v[t, cell]),
            ))
    return ObservationSet(gages=tuple(gages), radar_ze=radar,
                          stations=tuple(stations), elevation=cov.elev.copy(), T=T)


def simulate_dataset(spec: ScenarioSpec) -> SimulatedData:
    """Generate one dataset; deterministic given spec.seed."""
    rng = np.random.default_rng(spec.seed)
    cov = make_covariates(spec, rng)
    state = spec.state.copy()
    state.y = draw_latent(rng, state, cov)
    positions = gage_positions(spec, rng)
    obs = draw_observations(rng, state, cov, positions, spec.force_rain)
    return SimulatedData(obs=obs, cov=cov, y_true=state.y, state=state,
                         gage_lonlat=tuple(positions))


def mean_shift_ms(state: ModelState, cov: CovariateFields) -> float:
    """Average displacement magnitude expressed in m/s (reporting aid)."""
    grid = cov.grid
    T = cov.T
    if T < 2:
        return 0.0
    from .model import displacement_field

    k_shift = int(math.isqrt(state.beta_shift1.shape[1])) if state.beta_shift1.size else 1
    basis = tensor_basis(grid, k_shift)
    factor = cells_per_ms(grid)
    mags = []
    for t in range(1, T):
        dx, dy = displacement_field(t, cov, basis, state)
        mags.append(np.hypot(dx, dy) / factor)
    return float(np.mean(np.concatenate(mags)))


def simulate_latents_many(
    spec: ScenarioSpec, n_real: int
) -> tuple[np.ndarray, LatentFieldSpec, CovariateFields]:
    """(n_real, T, n) independent latent realizations with fixed shifts.

    Vectorized over realizations (one banded solve per time step) so large
    replication counts are cheap; covariates and shifts come from the
    scenario truth.
    """
    rng = np.random.default_rng(spec.seed)
    cov = make_covariates(spec, rng)
    state = spec.state
    lat_spec = latent_spec_from_state(state, cov)
    grid, T = spec.grid, spec.T
    y = np.zeros((n_real, T, grid.n))
    y[:, 0, :] = sample_car_many(rng, cov.x_mean1 @ state.beta1_mean,
                                 CarSpec(grid, state.rho_y, state.tau2_y), n_real)
    for t in range(1, T):
        src = lat_spec.src[t - 1]
        mean_fixed = cov.x_dyn[t] @ state.beta_dyn
        eps = sample_car_many(rng, np.zeros(grid.n),
                              CarSpec(grid, state.rho_y, float(state.tau2_eps[t - 1])),
                              n_real)
        y[:, t, :] = state.rho * y[:, t - 1, src] + mean_fixed[None, :] + eps
    return y, lat_spec, cov


def empirical_covariance(
    spec: ScenarioSpec,
    n_real: int,
    probes: list[tuple[int, tuple[int, int], int, int]],
) -> list[tuple[float, float]]:
    """Monte Carlo covariance of Y at each probe (i, h, t, tau), t 1-based,
    plus jackknife standard errors over the replications."""
    if n_real < 100:
        raise ValueError(f"need at least 100 replications, got {n_real}")
    y, lat_spec, _ = simulate_latents_many(spec, n_real)
    grid = spec.grid
    out = []
    for i, h, t, tau in probes:
        x, yy = grid.coords(i)
        j = grid.index(x + h[0], yy + h[1])
        a = y[:, t - 1, i]
        b = y[:, t + tau - 1, j]
        out.append(_cov_with_jackknife(a, b))
    return out


def _cov_with_jackknife(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    r = a.shape[0]
    sa, sb = a.sum(), b.sum()
    sab = float(a @ b)
    est = (sab - sa * sb / r) / (r - 1)
    # leave-one-out covariances from the sufficient statistics
    sa_i = sa - a
    sb_i = sb - b
    sab_i = sab - a * b
    loo = (sab_i - sa_i * sb_i / (r - 1)) / (r - 2)
    se = math.sqrt((r - 1) / r * float(np.sum((loo - loo.mean()) ** 2)))
    return float(est), se
