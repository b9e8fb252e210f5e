"""Sectioned key=value run configuration.

Unknown sections or keys are errors so typos surface immediately.  The
[simulate] section feeds cmd_simulate; everything else drives fit, predict,
and validate.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .grid import Grid
from .mcmc import SamplerConfig
from .model import MODEL_PRESETS, ModelConfig, PriorConfig, model_preset


@dataclass(frozen=True)
class PathsConfig:
    input_dir: Path = Path("data")
    output_dir: Path = Path("out")
    covariates: str = ""   # optional: read covariate fields from this export
    transforms: str = ""   # sidecar for the covariates export


@dataclass(frozen=True)
class HoldoutConfig:
    fraction: float = 0.0
    seed: int = 1
    repetitions: int = 1

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError(f"holdout fraction must lie in [0, 1), got {self.fraction}")
        if self.repetitions < 1:
            raise ValueError("holdout repetitions must be >= 1")


@dataclass(frozen=True)
class SimulateConfig:
    n_gages: int = 12
    placement: str = "grid"
    wind: str = "bumpy:10,0,4,2,1.5"
    seed: int = 0
    force_rain: bool = False


@dataclass(frozen=True)
class RunConfig:
    grid: Grid
    T: int
    paths: PathsConfig
    model: ModelConfig
    sampler: SamplerConfig
    holdout: HoldoutConfig
    simulate: SimulateConfig


_GRID_KEYS = {"nx", "ny", "cell_size_km", "origin_lon", "origin_lat", "dt_minutes", "t"}
_PATH_KEYS = {"input_dir", "output_dir", "covariates", "transforms"}
_MODEL_KEYS = {"preset", "bias_spatial", "shift_spatial", "basis_k_bias", "basis_k_shift",
               "tau2_shape", "tau2_rate", "obs_prec_shape", "obs_prec_rate",
               "c2_shape", "c2_rate", "coef_var", "rho_lo", "rho_hi"}
_SAMPLER_KEYS = {"n_iter", "burn_in", "thin", "seed", "adapt_window", "adapt_end",
                 "scale_latent", "scale_scalar", "scale_vector"}
_HOLDOUT_KEYS = {"fraction", "seed", "repetitions"}
_SIMULATE_KEYS = {"n_gages", "placement", "wind", "seed", "force_rain"}
_SECTIONS = {"grid": _GRID_KEYS, "paths": _PATH_KEYS, "model": _MODEL_KEYS,
             "sampler": _SAMPLER_KEYS, "holdout": _HOLDOUT_KEYS, "simulate": _SIMULATE_KEYS}


class ConfigError(ValueError):
    pass


def _check_keys(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def load_config(path: Path | str, seed_override: int | None = None,
                preset_override: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found")
    _check_keys(parser)
    if "grid" not in parser:
        raise ConfigError("missing required section [grid]")
    g = parser["grid"]
    try:
        grid = Grid(
            nx=g.getint("nx"), ny=g.getint("ny"),
            cell_size_km=g.getfloat("cell_size_km", 1.0),
            origin_lon=g.getfloat("origin_lon", 0.0),
            origin_lat=g.getfloat("origin_lat", 0.0),
            dt_minutes=g.getfloat("dt_minutes", 10.0),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [grid] section: {e}") from e
    T = g.getint("t", 1)
    if T < 1:
        raise ConfigError(f"invalid [grid] t = {T}")

    p = parser["paths"] if "paths" in parser else {}
    paths = PathsConfig(
        input_dir=Path(p.get("input_dir", "data")),
        output_dir=Path(p.get("output_dir", "out")),
        covariates=p.get("covariates", ""),
        transforms=p.get("transforms", ""),
    )

    m = parser["model"] if "model" in parser else {}
    prior_kw = {}
    for key in ("tau2_shape", "tau2_rate", "obs_prec_shape", "obs_prec_rate",
                "c2_shape", "c2_rate", "coef_var", "rho_lo", "rho_hi"):
        if key in m:
            prior_kw[key] = float(m[key])
    priors = PriorConfig(**prior_kw)
    preset = preset_override or m.get("preset", "")
    if preset:
        if preset not in MODEL_PRESETS:
            raise ConfigError(f"unknown model preset {preset!r}")
        model = model_preset(preset, T=T, priors=priors)
    else:
        model = ModelConfig(
            T=T,
            bias_spatial=_bool(m.get("bias_spatial", "true")),
            shift_spatial=_bool(m.get("shift_spatial", "true")),
            basis_k_bias=int(m.get("basis_k_bias", 3)),
            basis_k_shift=int(m.get("basis_k_shift", 3)),
            priors=priors,
        )

    s = parser["sampler"] if "sampler" in parser else {}
    try:
        sampler = SamplerConfig(
            n_iter=int(s.get("n_iter", 20_000)),
            burn_in=int(s.get("burn_in", 10_000)),
            thin=int(s.get("thin", 10)),
            seed=int(s.get("seed", 0)),
            adapt_window=int(s.get("adapt_window", 50)),
            adapt_end=int(s["adapt_end"]) if "adapt_end" in s else None,
            scale_latent=float(s.get("scale_latent", 0.5)),
            scale_scalar=float(s.get("scale_scalar", 0.3)),
            scale_vector=float(s.get("scale_vector", 0.15)),
        )
    except ValueError as e:
        raise ConfigError(f"invalid [sampler] section: {e}") from e
    if seed_override is not None:
        sampler = replace(sampler, seed=seed_override)

    h = parser["holdout"] if "holdout" in parser else {}
    try:
        holdout = HoldoutConfig(
            fraction=float(h.get("fraction", 0.0)),
            seed=int(h.get("seed", 1)),
            repetitions=int(h.get("repetitions", 1)),
        )
    except ValueError as e:
        raise ConfigError(f"invalid [holdout] section: {e}") from e

    sm = parser["simulate"] if "simulate" in parser else {}
    simulate = SimulateConfig(
        n_gages=int(sm.get("n_gages", 12)),
        placement=sm.get("placement", "grid"),
        wind=sm.get("wind", "bumpy:10,0,4,2,1.5"),
        seed=int(sm.get("seed", 0)),
        force_rain=_bool(sm.get("force_rain", "false")),
    )
    return RunConfig(grid=grid, T=T, paths=paths, model=model,
                     sampler=sampler, holdout=holdout, simulate=simulate)
