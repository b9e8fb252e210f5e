"""Adaptive random-walk Metropolis sampler over the full model state.

Each scalar parameter is its own block; coefficient vectors are updated as
multivariate random-walk blocks; latent fields are updated single-site in
checkerboard order using local evaluation (only the terms touching a cell
are recomputed, which reproduces the full log-posterior acceptance decision
exactly).  Proposal scales adapt toward 0.40 acceptance in windows and
freeze at burn-in.

All randomness for the latent sweep is drawn outside the inner kernel, so
runs are deterministic given the seed whether or not numba is present.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    LOG2PI,
    ModelConfig,
    ModelState,
    PosteriorEvaluator,
    log_prior,
    radar_inversion,
)


def _log_expit_scalar(x: float) -> float:
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _latent_sweep_py(
    y, resid, mean, t, cells, z, logu, scale,
    nbr_ptr, nbr_idx, deg,
    radar_code, radar_logz, gage_ptr, gage_logr, gage_zero,
    a_g, b_g, s2g, a_r, b_r, s2r, c2, c1,
    rho_y, tau2_y, rho, tau2_eps,
    child_ptr, child_idx, has_next, marker,
):
    n = deg.shape[0]
    tau_t = tau2_y if t == 0 else tau2_eps[t - 1]
    accepted = 0
    for s in range(cells.shape[0]):
        i = cells[s]
        dy = scale * z[s]
        yo = y[t, i]
        yn = yo + dy
        delta = 0.0
        code = radar_code[t, i]
        if code == 1:
            delta += _log_expit_scalar(a_r + b_r * yn) - _log_expit_scalar(a_r + b_r * yo)
        elif code == 2:
            lz = radar_logz[t, i]
            delta += _log_expit_scalar(-(a_r + b_r * yn)) - _log_expit_scalar(-(a_r + b_r * yo))
            ro = lz - c1[i] - c2 * yo
            rn = lz - c1[i] - c2 * yn
            delta += (ro * ro - rn * rn) / (2.0 * s2r)
        base = t * n + i
        for g in range(gage_ptr[base], gage_ptr[base + 1]):
            if gage_zero[g] == 1:
                delta += _log_expit_scalar(a_g + b_g * yn) - _log_expit_scalar(a_g + b_g * yo)
            else:
                lr = gage_logr[g]
                delta += _log_expit_scalar(-(a_g + b_g * yn)) - _log_expit_scalar(-(a_g + b_g * yo))
                delta += ((lr - yo) * (lr - yo) - (lr - yn) * (lr - yn)) / (2.0 * s2g)
        # CAR quadratic at time t: residual changes only at cell i
        ar = deg[i] * resid[t, i]
        for p in range(nbr_ptr[i], nbr_ptr[i + 1]):
            ar -= rho_y * resid[t, nbr_idx[p]]
        delta += -0.5 * tau_t * (2.0 * dy * ar + dy * dy * deg[i])
        # CAR quadratic at time t+1: the dynamics mean moves at i's children
        if has_next:
            tau_n = tau2_eps[t]
            d = rho * dy
            lo, hi = child_ptr[i], child_ptr[i + 1]
            for p in range(lo, hi):
                marker[child_idx[p]] = 1
            s1 = 0.0
            sdeg = 0.0
            adj = 0.0
            for p in range(lo, hi):
                j = child_idx[p]
                arj = deg[j] * resid[t + 1, j]
                for q in range(nbr_ptr[j], nbr_ptr[j + 1]):
                    k = nbr_idx[q]
                    arj -= rho_y * resid[t + 1, k]
                    if marker[k] == 1:
                        adj += 1.0
                s1 += arj
                sdeg += deg[j]
            for p in range(lo, hi):
                marker[child_idx[p]] = 0
            delta += tau_n * d * s1 - 0.5 * tau_n * d * d * (sdeg - rho_y * adj)
        if logu[s] < delta:
            accepted += 1
            y[t, i] = yn
            resid[t, i] += dy
            if has_next:
                for p in range(child_ptr[i], child_ptr[i + 1]):
                    j = child_idx[p]
                    mean[t + 1, j] += rho * dy
                    resid[t + 1, j] -= rho * dy
    return accepted


try:  # pragma: no cover - exercised implicitly when numba is installed
    from numba import njit as _njit

    _log_expit_scalar = _njit(cache=True)(_log_expit_scalar)
    _latent_sweep = _njit(cache=True)(_latent_sweep_py)
except ImportError:  # pragma: no cover
    _latent_sweep = _latent_sweep_py


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 20_000
    burn_in: int = 10_000
    thin: int = 10
    seed: int = 0
    adapt_window: int = 50
    adapt_end: int | None = None  # defaults to burn_in
    scale_latent: float = 0.5
    scale_scalar: float = 0.3
    scale_vector: float = 0.15
    # per-block initial scale overrides; alpha's posterior is steppy (integer
    # rounding of the shift), so it starts much tighter than other scalars
    scale_overrides: tuple = (("alpha_shift", 0.02),)

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError(f"need 0 <= burn_in < n_iter, got {self.burn_in}, {self.n_iter}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        end = self.burn_in if self.adapt_end is None else self.adapt_end
        if end > self.burn_in:
            raise ValueError("adaptation must freeze at or before burn-in")

    @property
    def adaptation_end(self) -> int:
        return self.burn_in if self.adapt_end is None else self.adapt_end

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.burn_in + self.thin - 1) // self.thin


@dataclass(frozen=True)
class Block:
    """One Metropolis update unit: a view into ModelState plus its transform."""

    name: str
    get: callable
    set: callable
    transform: str = "identity"  # 'identity' | 'log' | 'logit'
    bounds: tuple[float, float] = (0.0, 1.0)
    components: tuple[str, ...] = ()
    vector: bool = False


def _to_unconstrained(block: Block, theta: np.ndarray) -> np.ndarray:
    if block.transform == "identity":
        return theta.copy()
    if block.transform == "log":
        return np.log(theta)
    lo, hi = block.bounds
    e = (theta - lo) / (hi - lo)
    return np.log(e) - np.log1p(-e)


def _from_unconstrained(block: Block, phi: np.ndarray) -> np.ndarray:
    if block.transform == "identity":
        return phi.copy()
    if block.transform == "log":
        return np.exp(phi)
    lo, hi = block.bounds
    return lo + (hi - lo) / (1.0 + np.exp(-phi))


def _log_jacobian_logit(phi: np.ndarray, lo: float, hi: float) -> float:
    # log[(hi-lo) * expit(phi) * expit(-phi)] summed over components
    a = np.abs(phi)
    return float(np.sum(math.log(hi - lo) - a - 2.0 * np.log1p(np.exp(-a))))


def metropolis_block(state, block: Block, scale: float, rng: np.random.Generator, logpost):
    """One Gaussian random-walk Metropolis update of `block` on `state`.

    The proposal runs on the block's unconstrained transform with the
    transform Jacobian in the acceptance ratio; a non-finite proposal log
    posterior is auto-rejected.  Returns (new_state, accepted).
    """
    if scale < 0:
        raise ValueError("proposal scale must be >= 0")
    theta = np.atleast_1d(np.asarray(block.get(state), dtype=float))
    phi = _to_unconstrained(block, theta)
    phi_new = phi + scale * rng.standard_normal(phi.shape)
    theta_new = _from_unconstrained(block, phi_new)
    proposal = block.set(state, theta_new)
    lp_old = logpost(state)
    lp_new = logpost(proposal)
    if not math.isfinite(lp_new):
        return state, False
    if block.transform == "identity":
        jac = 0.0
    elif block.transform == "log":
        jac = float(np.sum(phi_new) - np.sum(phi))
    else:
        lo, hi = block.bounds
        jac = _log_jacobian_logit(phi_new, lo, hi) - _log_jacobian_logit(phi, lo, hi)
    log_ratio = lp_new - lp_old + jac
    if math.log(rng.random()) < log_ratio:
        return proposal, True
    return state, False


def adapt_scale(current: float, observed_rate: float, target: float = 0.40) -> float:
    """scale * exp(rate - target): monotone in the rate, no-op at target."""
    if not 0.0 <= observed_rate <= 1.0:
        raise ValueError(f"acceptance rate must lie in [0, 1], got {observed_rate}")
    return current * math.exp(observed_rate - target)


def _scalar_block(name, comps, transform="identity", bounds=(0.0, 1.0)):
    def get(state):
        return np.array([getattr(state, name)])

    def set_(state, v):
        new = state.copy()
        setattr(new, name, float(v[0]))
        return new

    return Block(name=name, get=get, set=set_, transform=transform,
                 bounds=bounds, components=tuple(comps))


def _vector_block(name, comps, transform="identity"):
    def get(state):
        return getattr(state, name).ravel().copy()

    def set_(state, v):
        new = state.copy()
        setattr(new, name, v.reshape(getattr(state, name).shape))
        return new

    return Block(name=name, get=get, set=set_, transform=transform,
                 components=tuple(comps), vector=True)


def _indexed_block(name, attr, idx, comps, transform="identity"):
    def get(state):
        return np.array([getattr(state, attr)[idx]])

    def set_(state, v):
        new = state.copy()
        getattr(new, attr)[idx] = float(v[0])
        return new

    return Block(name=name, get=get, set=set_, transform=transform,
                 components=tuple(comps))


def _row_block(name, attr, row, comps):
    def get(state):
        return getattr(state, attr)[row].copy()

    def set_(state, v):
        new = state.copy()
        getattr(new, attr)[row] = v
        return new

    return Block(name=name, get=get, set=set_, components=tuple(comps), vector=True)


def build_blocks(config: ModelConfig) -> list[Block]:
    """Fixed update order for all non-latent blocks."""
    T = config.T
    dyn_all = tuple(f"dyn{t}" for t in range(1, T))
    rho_bounds = (config.priors.rho_lo, config.priors.rho_hi)
    blocks = [
        _vector_block("beta1_mean", ("car1",)),
        _scalar_block("tau2_y", ("car1",), transform="log"),
        _scalar_block("rho_y", ("car1",) + dyn_all, transform="logit", bounds=rho_bounds),
    ]
    if T > 1:
        blocks += [
            _vector_block("beta_dyn", dyn_all),
            _scalar_block("rho", dyn_all, transform="logit", bounds=rho_bounds),
            _scalar_block("alpha_shift", dyn_all),
        ]
        for t in range(1, T):
            blocks.append(_indexed_block(f"tau2_eps_{t}", "tau2_eps", t - 1,
                                         (f"dyn{t}",), transform="log"))
            blocks.append(_row_block(f"beta_shift1_{t}", "beta_shift1", t - 1, (f"dyn{t}",)))
            blocks.append(_row_block(f"beta_shift2_{t}", "beta_shift2", t - 1, (f"dyn{t}",)))
    blocks += [
        _scalar_block("a_g", ("gage",)),
        _scalar_block("b_g", ("gage",)),
        _scalar_block("sigma2_g", ("gage",), transform="log"),
        _scalar_block("a_r", ("radar",)),
        _scalar_block("b_r", ("radar",)),
        _scalar_block("c2", ("radar",), transform="log"),
        _scalar_block("sigma2_r", ("radar",), transform="log"),
        _vector_block("c1_gamma", ("radar",)),
    ]
    return blocks


def _profile_shift_init(evaluator: PosteriorEvaluator, y0: np.ndarray) -> tuple[float, float]:
    """Coarse (alpha, rho) warm start from the inversion field.

    Scans a small alpha grid; for each candidate the implied sources give a
    one-parameter regression of y(t) on y_src(t-1), and the pair with the
    smallest residual sum wins.  Metropolis travel across the steppy alpha
    landscape is otherwise the slowest part of burn-in.
    """
    from .grid import shifted_indices
    from .model import round_half_away

    cov = evaluator.cov
    T = evaluator.T
    if T < 2:
        return 0.0, 0.5
    best = (math.inf, 0.0, 0.5)
    for alpha in np.linspace(0.0, 0.9, 19):
        num = 0.0
        den = 0.0
        sse_parts = []
        for t in range(1, T):
            dx = round_half_away(alpha * cov.wind_u[t])
            dy = round_half_away(alpha * cov.wind_v[t])
            src = shifted_indices(cov.grid, dx, dy)
            a = y0[t] - y0[t].mean()
            b = y0[t - 1][src] - y0[t - 1][src].mean()
            num += float(a @ b)
            den += float(b @ b)
            sse_parts.append((a, b))
        rho = min(max(num / den if den > 0 else 0.0, 0.05), 0.95)
        sse = sum(float(np.sum((a - rho * b) ** 2)) for a, b in sse_parts)
        if sse < best[0]:
            best = (sse, float(alpha), rho)
    return best[1], best[2]


def default_initial_state(evaluator: PosteriorEvaluator) -> ModelState:
    """Warm start: radar-inversion latent field, prior medians elsewhere,
    and a coarse data-driven (alpha, rho) profile for the shift model."""
    from scipy.stats import gamma as _gamma

    cfg = evaluator.config
    p = cfg.priors
    T = cfg.T
    tau2_med = float(_gamma.ppf(0.5, p.tau2_shape, scale=1.0 / p.tau2_rate))
    prec_med = float(_gamma.ppf(0.5, p.obs_prec_shape, scale=1.0 / p.obs_prec_rate))
    c2_med = float(_gamma.ppf(0.5, p.c2_shape, scale=1.0 / p.c2_rate))
    mid_rho = 0.5 * (p.rho_lo + p.rho_hi)
    y0 = radar_inversion(evaluator.obs, evaluator.grid)
    alpha0, rho0 = _profile_shift_init(evaluator, y0)
    rho0 = min(max(rho0, p.rho_lo + 0.01), p.rho_hi - 0.01)
    return ModelState(
        y=y0,
        beta1_mean=np.zeros(4),
        beta_dyn=np.zeros(4),
        rho_y=mid_rho, rho=rho0,
        tau2_y=tau2_med,
        tau2_eps=np.full(max(T - 1, 0), tau2_med),
        a_g=0.0, b_g=0.0, a_r=0.0, b_r=0.0,
        # constant log(200) surface, consistent with the inversion warm start
        c1_gamma=np.full(cfg.k_bias ** 2, math.log(200.0)),
        c2=c2_med,
        sigma2_g=1.0 / prec_med, sigma2_r=1.0 / prec_med,
        alpha_shift=alpha0,
        beta_shift1=np.zeros((max(T - 1, 0), cfg.k_shift ** 2)),
        beta_shift2=np.zeros((max(T - 1, 0), cfg.k_shift ** 2)),
    )


class ChainSampler:
    """One chain: owns the mutable state, proposal scales, and counters."""

    def __init__(
        self,
        evaluator: PosteriorEvaluator,
        config: SamplerConfig,
        rng: np.random.Generator,
        init_state: ModelState | None = None,
        update_blocks: set[str] | None = None,
    ):
        self.ev = evaluator
        self.config = config
        self.rng = rng
        self.state = (init_state or default_initial_state(evaluator)).copy()
        self.blocks = [
            b for b in build_blocks(evaluator.config)
            if update_blocks is None or b.name in update_blocks
        ]
        self.latent_names = [f"y_t{t}" for t in range(evaluator.T)]
        self.update_latent = update_blocks is None or any(
            name in update_blocks for name in self.latent_names
        )
        overrides = dict(config.scale_overrides)
        self.scales: dict[str, float] = {}
        for b in self.blocks:
            default = config.scale_vector if b.vector else config.scale_scalar
            self.scales[b.name] = overrides.get(b.name, default)
        for name in self.latent_names:
            self.scales[name] = overrides.get(name, config.scale_latent)
        self.accept: dict[str, list[int]] = {k: [0, 0] for k in self.scales}  # window
        self.total: dict[str, list[int]] = {k: [0, 0] for k in self.scales}   # lifetime
        self.post_adapt: dict[str, list[int]] = {k: [0, 0] for k in self.scales}
        n = evaluator.n
        parity = (np.arange(n) % evaluator.grid.nx + np.arange(n) // evaluator.grid.nx) % 2
        self.color_cells = (
            np.nonzero(parity == 0)[0].astype(np.int64),
            np.nonzero(parity == 1)[0].astype(np.int64),
        )
        self._marker = np.zeros(n, dtype=np.uint8)
        self._empty_children = (np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))
        self._frozen = False

    def _children(self, src_row: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(src_row, kind="stable").astype(np.int64)
        ptr = np.zeros(self.ev.n + 1, dtype=np.int64)
        np.add.at(ptr, src_row + 1, 1)
        np.cumsum(ptr, out=ptr)
        return ptr, order

    def latent_phase(self) -> None:
        ev, st = self.ev, self.state
        if not self.update_latent:
            return
        src = ev.displacement_sources(st)
        mean, resid = ev.means_and_residuals(st, src)
        children = [self._children(src[m]) for m in range(ev.T - 1)]
        tau2_eps = st.tau2_eps.astype(np.float64)
        c1 = ev.bias_basis.surface(st.c1_gamma)
        for t in range(ev.T):
            name = f"y_t{t}"
            if name not in self.scales:
                continue
            has_next = t < ev.T - 1
            cptr, cidx = children[t] if has_next else self._empty_children
            acc = 0
            tot = 0
            for cells in self.color_cells:
                z = self.rng.standard_normal(cells.size)
                logu = np.log(self.rng.random(cells.size))
                acc += _latent_sweep(
                    st.y, resid, mean, t, cells, z, logu, self.scales[name],
                    ev.ops.ptr, ev.ops.idx, ev.ops.deg,
                    ev.radar_code, ev.radar_logz, ev.gage_ptr, ev.gage_logr, ev.gage_zero,
                    st.a_g, st.b_g, st.sigma2_g, st.a_r, st.b_r, st.sigma2_r,
                    st.c2, c1,
                    st.rho_y, st.tau2_y, st.rho, tau2_eps,
                    cptr, cidx, has_next, self._marker,
                )
                tot += cells.size
            self._count(name, acc, tot)

    def _count(self, name: str, acc: int, tot: int) -> None:
        self.accept[name][0] += acc
        self.accept[name][1] += tot
        self.total[name][0] += acc
        self.total[name][1] += tot
        if self._frozen:
            self.post_adapt[name][0] += acc
            self.post_adapt[name][1] += tot

    def block_phase(self) -> None:
        """Metropolis update of every parameter block.

        Component values are cached so each proposal costs one evaluation of
        the components its block touches; unaffected terms cancel from the
        acceptance ratio.  The math matches `metropolis_block` exactly.
        """
        ev = self.ev
        comps = {name: ev.component(name, self.state) for name in ev.component_names}
        prior = log_prior(self.state, ev.config)
        for b in self.blocks:
            scale = self.scales[b.name]
            theta = np.atleast_1d(np.asarray(b.get(self.state), dtype=float))
            phi = _to_unconstrained(b, theta)
            phi_new = phi + scale * self.rng.standard_normal(phi.shape)
            theta_new = _from_unconstrained(b, phi_new)
            proposal = b.set(self.state, theta_new)
            accepted = False
            prior_new = log_prior(proposal, ev.config)
            if math.isfinite(prior_new):
                comps_new = {c: ev.component(c, proposal) for c in b.components}
                if all(math.isfinite(v) for v in comps_new.values()):
                    lp_old = prior + sum(comps[c] for c in b.components)
                    lp_new = prior_new + sum(comps_new.values())
                    if b.transform == "identity":
                        jac = 0.0
                    elif b.transform == "log":
                        jac = float(np.sum(phi_new) - np.sum(phi))
                    else:
                        lo, hi = b.bounds
                        jac = _log_jacobian_logit(phi_new, lo, hi) - _log_jacobian_logit(phi, lo, hi)
                    if math.log(self.rng.random()) < lp_new - lp_old + jac:
                        accepted = True
                        self.state = proposal
                        prior = prior_new
                        comps.update(comps_new)
            self._count(b.name, int(accepted), 1)

    def adapt(self) -> None:
        for name, (acc, tot) in self.accept.items():
            if tot > 0:
                self.scales[name] = adapt_scale(self.scales[name], acc / tot)
            self.accept[name] = [0, 0]

    def sweep(self) -> None:
        self.latent_phase()
        self.block_phase()


@dataclass(frozen=True)
class PosteriorSamples:
    """Thinned post-burn-in draws plus per-draw deviance and the run report."""

    config: ModelConfig
    sampler: SamplerConfig
    y: np.ndarray            # (K, T, n)
    beta1_mean: np.ndarray
    beta_dyn: np.ndarray
    rho_y: np.ndarray
    rho: np.ndarray
    tau2_y: np.ndarray
    tau2_eps: np.ndarray
    a_g: np.ndarray
    b_g: np.ndarray
    a_r: np.ndarray
    b_r: np.ndarray
    c1_gamma: np.ndarray
    c2: np.ndarray
    sigma2_g: np.ndarray
    sigma2_r: np.ndarray
    alpha_shift: np.ndarray
    beta_shift1: np.ndarray  # (K, T-1, ks^2)
    beta_shift2: np.ndarray
    deviance: np.ndarray
    acceptance: dict = field(default_factory=dict)
    warnings: tuple = ()

    PARAM_FIELDS = (
        "y", "beta1_mean", "beta_dyn", "rho_y", "rho", "tau2_y", "tau2_eps",
        "a_g", "b_g", "a_r", "b_r", "c1_gamma", "c2", "sigma2_g", "sigma2_r",
        "alpha_shift", "beta_shift1", "beta_shift2",
    )

    @property
    def n_draws(self) -> int:
        return self.deviance.shape[0]

    def state_at(self, k: int) -> ModelState:
        return ModelState(
            y=self.y[k].copy(), beta1_mean=self.beta1_mean[k].copy(),
            beta_dyn=self.beta_dyn[k].copy(), rho_y=float(self.rho_y[k]),
            rho=float(self.rho[k]), tau2_y=float(self.tau2_y[k]),
            tau2_eps=self.tau2_eps[k].copy(), a_g=float(self.a_g[k]),
            b_g=float(self.b_g[k]), a_r=float(self.a_r[k]), b_r=float(self.b_r[k]),
            c1_gamma=self.c1_gamma[k].copy(), c2=float(self.c2[k]),
            sigma2_g=float(self.sigma2_g[k]), sigma2_r=float(self.sigma2_r[k]),
            alpha_shift=float(self.alpha_shift[k]),
            beta_shift1=self.beta_shift1[k].copy(), beta_shift2=self.beta_shift2[k].copy(),
        )

    def param(self, selector: str) -> np.ndarray:
        """Trace of one scalar quantity, e.g. 'c2', 'beta1_mean[2]', 'y[0,17]'."""
        name, idx = _parse_selector(selector)
        if name == "deviance":
            return self.deviance
        arr = getattr(self, name)
        if idx:
            return arr[(slice(None),) + idx]
        if arr.ndim != 1:
            raise ValueError(f"{name} needs an index, shape {arr.shape[1:]}")
        return arr


def _parse_selector(selector: str) -> tuple[str, tuple[int, ...]]:
    if "[" not in selector:
        return selector, ()
    name, rest = selector.split("[", 1)
    idx = tuple(int(s) for s in rest.rstrip("]").split(","))
    return name, idx


def run_chain(
    config: SamplerConfig,
    obs,
    cov,
    model_config: ModelConfig,
    init_state: ModelState | None = None,
    update_blocks: set[str] | None = None,
    seed: int | None = None,
) -> PosteriorSamples:
    """Run one chain and collect thinned post-burn-in draws.

    Deterministic given the seed; block order is fixed (latent checkerboard
    sweeps, then scalar and vector blocks); proposal adaptation happens in
    windows and freezes at `adapt_end`.
    """
    evaluator = PosteriorEvaluator(obs, cov, model_config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    sampler = ChainSampler(evaluator, config, rng, init_state, update_blocks)
    keep: dict[str, list] = {name: [] for name in PosteriorSamples.PARAM_FIELDS}
    deviance: list[float] = []
    adapt_until = config.adaptation_end
    for it in range(config.n_iter):
        sampler._frozen = it >= adapt_until
        sampler.sweep()
        if it < adapt_until and (it + 1) % config.adapt_window == 0:
            sampler.adapt()
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            st = sampler.state
            for name in PosteriorSamples.PARAM_FIELDS:
                v = getattr(st, name)
                keep[name].append(v.copy() if isinstance(v, np.ndarray) else v)
            deviance.append(evaluator.deviance(st))
    warn: list[str] = []
    for name, (acc, tot) in sampler.post_adapt.items():
        if tot > 0 and acc == 0:
            warn.append(f"block {name!r} accepted nothing after adaptation froze")
    for w in warn:
        warnings.warn(w)
    arrays = {name: np.array(vals) for name, vals in keep.items()}
    acceptance = {
        name: (vals[0] / vals[1] if vals[1] else math.nan)
        for name, vals in sampler.total.items()
    }
    return PosteriorSamples(
        config=model_config, sampler=config, deviance=np.array(deviance),
        acceptance=acceptance, warnings=tuple(warn), **arrays,
    )


def effective_sample_size(x: np.ndarray) -> float:
    """ESS by initial-positive-sequence truncation of the autocorrelation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return float(n)
    xc = x - x.mean()
    v = float(np.dot(xc, xc)) / n
    if v <= 0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = 0.0
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < n else 0.0)
        if gamma <= 0:
            break
        tau += 2.0 * gamma
        m += 1
    tau = max(tau - 1.0, 1.0)
    return float(min(n, n / tau))


@dataclass(frozen=True)
class TraceSummary:
    median: float
    q025: float
    q975: float
    ess: float


def trace_summary(samples: PosteriorSamples, selector: str) -> TraceSummary:
    """Median, central 95% interval, and ESS of one scalar parameter trace."""
    x = samples.param(selector)
    if x.size < 10:
        raise ValueError(f"need at least 10 draws, got {x.size}")
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return TraceSummary(median=float(q[1]), q025=float(q[0]), q975=float(q[2]),
                        ess=effective_sample_size(x))
