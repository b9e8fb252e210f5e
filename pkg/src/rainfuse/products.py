"""Posterior products: rain maps, zero-rain probability maps, the analytic
space-time covariance of the latent field, DIC, and hold-out calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve_banded
from scipy.special import expit

from .car import lattice_ops
from .grid import Grid
from .ingest import ObservationSet
from .mcmc import PosteriorSamples
from .model import ModelState
from .splines import tensor_basis


@dataclass(frozen=True)
class RainMap:
    """Cellwise posterior summaries of exp(Y) in mm/h, per time step."""

    mean: np.ndarray    # (T, n)
    median: np.ndarray
    q025: np.ndarray
    q975: np.ndarray


@dataclass(frozen=True)
class ZeroProbMap:
    pi_r: np.ndarray                 # (T, n) posterior mean zero probability, radar
    pi_g: np.ndarray                 # (T, n) gage analogue (meaningful at gage cells)
    gage_cells: frozenset[int]


def posterior_rain_map(samples: PosteriorSamples) -> RainMap:
    if samples.n_draws < 1:
        raise ValueError("no draws")
    rain = np.exp(samples.y)  # (K, T, n)
    q = np.quantile(rain, [0.025, 0.5, 0.975], axis=0)
    return RainMap(mean=rain.mean(axis=0), median=q[1], q025=q[0], q975=q[2])


def zero_prob_map(samples: PosteriorSamples, gage_cells=()) -> ZeroProbMap:
    pi_r = expit(samples.a_r[:, None, None] + samples.b_r[:, None, None] * samples.y)
    pi_g = expit(samples.a_g[:, None, None] + samples.b_g[:, None, None] * samples.y)
    return ZeroProbMap(pi_r=pi_r.mean(axis=0), pi_g=pi_g.mean(axis=0),
                       gage_cells=frozenset(int(c) for c in gage_cells))


# -- analytic latent covariance ------------------------------------------------


@dataclass(frozen=True)
class LatentFieldSpec:
    """Model parameters plus fixed displacement fields (conditioned on)."""

    grid: Grid
    rho_y: float
    tau2_y: float
    rho: float
    tau2_eps: np.ndarray  # (T-1,)
    src: np.ndarray       # (T-1, n) source cell per target cell

    @property
    def T(self) -> int:
        return self.src.shape[0] + 1


def latent_spec_from_state(state: ModelState, cov) -> LatentFieldSpec:
    """Condition on the displacements implied by a state and covariates."""
    from .model import source_cells

    T = len(state.tau2_eps) + 1
    basis = tensor_basis(cov.grid, int(math.isqrt(state.beta_shift1.shape[1])))
    src = np.zeros((T - 1, cov.grid.n), dtype=np.int64)
    for t in range(1, T):
        src[t - 1] = source_cells(t, cov, basis, state)
    return LatentFieldSpec(grid=cov.grid, rho_y=state.rho_y, tau2_y=state.tau2_y,
                           rho=state.rho, tau2_eps=np.asarray(state.tau2_eps, float),
                           src=src)


def _trace_back(spec: LatentFieldSpec, cell: int, t_from: int, t_to: int) -> int:
    # 1-based times; walk the shift chain back from t_from to epoch t_to
    c = cell
    for s in range(t_from, t_to, -1):
        c = int(spec.src[s - 2, c])
    return c


def latent_covariance(
    spec: LatentFieldSpec, i: int, h: tuple[int, int], t: int, tau: int
) -> float:
    """cov(Y_i(t), Y_{i+h}(t+tau)) conditioned on the shifts; t is 1-based.

    Both indices are traced back through their shift chains; each shared
    innovation epoch contributes a rho power times the matching CAR
    covariance entry, which reproduces the closed-form three-term mixture.
    """
    T = spec.T
    if not (1 <= t and tau >= 0 and t + tau <= T):
        raise ValueError(f"lag out of range: t={t}, tau={tau}, T={T}")
    grid = spec.grid
    x, y = grid.coords(i)
    xj, yj = x + h[0], y + h[1]
    if not (0 <= xj < grid.nx and 0 <= yj < grid.ny):
        raise ValueError(f"offset {h} from cell {i} leaves the grid")
    j = grid.index(xj, yj)
    ops = lattice_ops(grid)
    total = 0.0
    for e in range(1, t + 1):
        a = _trace_back(spec, i, t, e)
        b = _trace_back(spec, j, t + tau, e)
        tau2 = spec.tau2_y if e == 1 else float(spec.tau2_eps[e - 2])
        R, _ = ops.factor(spec.rho_y)
        unit = np.zeros(grid.n)
        unit[b] = 1.0
        entry = cho_solve_banded((R, False), unit)[a] / tau2
        total += spec.rho ** (2 * t + tau - 2 * e) * entry
    return float(total)


# -- DIC -----------------------------------------------------------------------


def posterior_mean_state(samples: PosteriorSamples) -> ModelState:
    """Latent fields averaged cellwise; constrained parameters averaged on
    their unconstrained scale and mapped back."""
    lo = samples.config.priors.rho_lo
    hi = samples.config.priors.rho_hi

    def pos_mean(a):
        return float(np.exp(np.mean(np.log(a))))

    def rho_mean(a):
        e = (np.asarray(a) - lo) / (hi - lo)
        m = np.mean(np.log(e) - np.log1p(-e))
        return float(lo + (hi - lo) * expit(m))

    return ModelState(
        y=samples.y.mean(axis=0),
        beta1_mean=samples.beta1_mean.mean(axis=0),
        beta_dyn=samples.beta_dyn.mean(axis=0),
        rho_y=rho_mean(samples.rho_y), rho=rho_mean(samples.rho),
        tau2_y=pos_mean(samples.tau2_y),
        tau2_eps=np.exp(np.mean(np.log(samples.tau2_eps), axis=0))
        if samples.tau2_eps.size else samples.tau2_eps.mean(axis=0),
        a_g=float(samples.a_g.mean()), b_g=float(samples.b_g.mean()),
        a_r=float(samples.a_r.mean()), b_r=float(samples.b_r.mean()),
        c1_gamma=samples.c1_gamma.mean(axis=0),
        c2=pos_mean(samples.c2),
        sigma2_g=pos_mean(samples.sigma2_g), sigma2_r=pos_mean(samples.sigma2_r),
        alpha_shift=float(samples.alpha_shift.mean()),
        beta_shift1=samples.beta_shift1.mean(axis=0),
        beta_shift2=samples.beta_shift2.mean(axis=0),
    )


def dic(samples: PosteriorSamples, deviance_at) -> tuple[float, float, float]:
    """(DIC, D_bar, p_D) with p_D = D_bar - D(theta_bar), DIC = D_bar + p_D.

    `deviance_at` maps a ModelState to its deviance (-2 * observation log
    likelihood); the per-draw deviances are already recorded in `samples`.
    """
    d_bar = float(samples.deviance.mean())
    p_d = d_bar - float(deviance_at(posterior_mean_state(samples)))
    return d_bar + p_d, d_bar, p_d


# -- hold-out calibration --------------------------------------------------------


@dataclass(frozen=True)
class HoldoutRecord:
    kind: str       # 'gage' or 'radar'
    label: str      # station id or 'x:y'
    cell: int
    t: int
    observed: float


def split_holdout(
    obs: ObservationSet, fraction: float, rng: np.random.Generator
) -> tuple[ObservationSet, list[HoldoutRecord]]:
    """Remove `fraction` of the observed gage and radar records, uniformly
    at random per stream; returns the reduced set plus the held-out records."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"holdout fraction must be in (0, 1), got {fraction}")
    gage_obs = [k for k, g in enumerate(obs.gages) if g.rain is not None]
    n_g = int(round(fraction * len(gage_obs)))
    held_g = set(rng.choice(gage_obs, size=n_g, replace=False).tolist()) if n_g else set()
    records: list[HoldoutRecord] = []
    new_gages = []
    for k, g in enumerate(obs.gages):
        if k in held_g:
            records.append(HoldoutRecord(kind="gage", label=g.station_id,
                                         cell=g.cell, t=g.t, observed=float(g.rain)))
            new_gages.append(replace(g, rain=None))
        else:
            new_gages.append(g)
    radar = obs.radar_ze.copy()
    obs_idx = np.argwhere(~np.isnan(radar))
    n_r = int(round(fraction * obs_idx.shape[0]))
    if n_r:
        pick = rng.choice(obs_idx.shape[0], size=n_r, replace=False)
        for t, i in obs_idx[pick]:
            records.append(HoldoutRecord(kind="radar", label=f"cell{i}",
                                         cell=int(i), t=int(t),
                                         observed=float(radar[t, i])))
            radar[t, i] = np.nan
    return replace(obs, gages=tuple(new_gages), radar_ze=radar), records


LOG_FLOOR = -2.0  # zeros are represented at this natural-log floor


def holdout_coverage(
    samples: PosteriorSamples,
    holdout: list[HoldoutRecord],
    level: float = 0.95,
    seed: int = 0,
    grid: Grid | None = None,
    log_floor: float = LOG_FLOOR,
) -> tuple[float, list[dict]]:
    """Posterior-predictive interval coverage of held-out records.

    For each record, one predictive value is simulated per draw (exact zero
    with the modeled probability, log-normal otherwise); values and the
    observation are floored at `log_floor` on the log scale, and the record
    is covered when its floored log value lies inside the central interval.
    """
    if not holdout:
        raise ValueError("empty holdout set")
    k_bias = int(math.isqrt(samples.c1_gamma.shape[1]))
    basis = None
    if grid is not None:
        basis = tensor_basis(grid, k_bias)
    alpha = (1.0 - level) / 2.0
    rows: list[dict] = []
    covered = 0
    for idx, rec in enumerate(holdout):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        y_draw = samples.y[:, rec.t, rec.cell]
        if rec.kind == "gage":
            pi = expit(samples.a_g + samples.b_g * y_draw)
            mu = y_draw
            sd = np.sqrt(samples.sigma2_g)
        else:
            pi = expit(samples.a_r + samples.b_r * y_draw)
            if basis is None:
                raise ValueError("radar holdout records need the grid for the bias surface")
            c1 = samples.c1_gamma @ basis.B[rec.cell]
            mu = c1 + samples.c2 * y_draw
            sd = np.sqrt(samples.sigma2_r)
        v = rng.normal(mu, sd)
        v = np.maximum(v, log_floor)
        v[rng.random(v.shape) < pi] = log_floor
        lo_q, hi_q = np.quantile(v, [alpha, 1.0 - alpha])
        obs_log = log_floor if rec.observed == 0.0 else max(math.log(rec.observed), log_floor)
        inside = bool(lo_q <= obs_log <= hi_q)
        covered += inside
        rows.append(dict(record_id=f"{rec.kind}:{rec.label}:{rec.t}", kind=rec.kind,
                         observed=obs_log, lower=float(lo_q), upper=float(hi_q),
                         inside=inside))
    return covered / len(holdout), rows


# -- file writers ---------------------------------------------------------------


def write_rainmap_csv(rainmap: RainMap, t: int, grid: Grid, path: Path | str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write("x,y,mean,median,q025,q975\n")
        for i in range(grid.n):
            x, y = grid.coords(i)
            f.write(f"{x},{y},{rainmap.mean[t, i]!r},{rainmap.median[t, i]!r},"
                    f"{rainmap.q025[t, i]!r},{rainmap.q975[t, i]!r}\n")


def write_probmap_csv(probmap: ZeroProbMap, t: int, grid: Grid, path: Path | str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write("x,y,pi_r,pi_g\n")
        for i in range(grid.n):
            x, y = grid.coords(i)
            pig = repr(float(probmap.pi_g[t, i])) if i in probmap.gage_cells else ""
            f.write(f"{x},{y},{float(probmap.pi_r[t, i])!r},{pig}\n")


def write_dic_txt(values: tuple[float, float, float], path: Path | str) -> None:
    d, d_bar, p_d = values
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write(f"DIC {d!r}\nD_bar {d_bar!r}\np_D {p_d!r}\n")


def write_coverage_csv(rows: list[dict], path: Path | str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write("record_id,observed,lower,upper,inside\n")
        for r in rows:
            f.write(f"{r['record_id']},{r['observed']!r},{r['lower']!r},"
                    f"{r['upper']!r},{int(r['inside'])}\n")
