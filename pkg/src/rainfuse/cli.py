"""Command-line pipeline: simulate -> fit -> predict -> validate.

Runs are reproducible: identical config + seed produce byte-identical
output files.  RAINFUSE_THREADS caps the worker count used for holdout
repetitions (default 1, sequential).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import products
from .config import ConfigError, RunConfig, load_config
from .covariates import build_covariates, load_covariates, write_covariates
from .grid import Grid
from .ingest import InputPaths, ObservationSet, load_observations, screen_gage_zeros, write_observations
from .mcmc import PosteriorSamples, run_chain
from .model import ModelConfig, ModelState, PosteriorEvaluator
from .products import HoldoutRecord, split_holdout
from .simulate import ScenarioSpec, default_true_state, mean_shift_ms, simulate_dataset


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1, np.uint64)[0])


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RAINFUSE_THREADS", "1")))
    except ValueError:
        return 1


# -- simulate --------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    out = cfg.paths.input_dir
    out.mkdir(parents=True, exist_ok=True)
    state = default_true_state(cfg.grid, cfg.T, cfg.model.k_bias, cfg.model.k_shift)
    spec = ScenarioSpec(
        grid=cfg.grid, T=cfg.T, state=state,
        n_gages=cfg.simulate.n_gages, placement=cfg.simulate.placement,
        wind=cfg.simulate.wind, seed=cfg.simulate.seed,
        force_rain=cfg.simulate.force_rain,
    )
    sim = simulate_dataset(spec)
    write_observations(sim.obs, InputPaths.in_dir(out), cfg.grid)
    write_covariates(sim.cov, out / "covariates.csv", out / "transforms.csv")
    with open(out / "truth_Y.csv", "w", newline="\n", encoding="utf-8") as f:
        f.write("t,x,y,value\n")
        for t in range(cfg.T):
            for i in range(cfg.grid.n):
                x, y = cfg.grid.coords(i)
                f.write(f"{t},{x},{y},{sim.y_true[t, i]!r}\n")
    with open(out / "truth_params.csv", "w", newline="\n", encoding="utf-8") as f:
        f.write("name,value\n")
        for name in ("rho_y", "rho", "tau2_y", "a_g", "b_g", "a_r", "b_r", "c2",
                     "sigma2_g", "sigma2_r", "alpha_shift"):
            f.write(f"{name},{float(getattr(sim.state, name))!r}\n")
        for name in ("beta1_mean", "beta_dyn", "tau2_eps", "c1_gamma"):
            arr = np.asarray(getattr(sim.state, name)).ravel()
            for k, v in enumerate(arr):
                f.write(f"{name}[{k}],{float(v)!r}\n")
        for name in ("beta_shift1", "beta_shift2"):
            arr = np.asarray(getattr(sim.state, name))
            for m in range(arr.shape[0]):
                for k in range(arr.shape[1]):
                    f.write(f"{name}[{m},{k}],{float(arr[m, k])!r}\n")
    print(f"simulated dataset written to {out}")
    return 0


# -- trace persistence -------------------------------------------------------------


def write_trace(samples: PosteriorSamples, path: Path) -> None:
    """Long-format trace: iter,block,param,value for every kept draw."""
    sc = samples.sampler
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write("iter,block,param,value\n")
        for k in range(samples.n_draws):
            it = sc.burn_in + k * sc.thin
            for name in PosteriorSamples.PARAM_FIELDS:
                arr = getattr(samples, name)[k]
                if np.ndim(arr) == 0:
                    f.write(f"{it},{name},{name},{float(arr)!r}\n")
                else:
                    flat = np.asarray(arr)
                    for idx in np.ndindex(flat.shape):
                        label = f"{name}[{','.join(str(v) for v in idx)}]"
                        f.write(f"{it},{name},{label},{float(flat[idx])!r}\n")
            f.write(f"{it},deviance,deviance,{float(samples.deviance[k])!r}\n")


def read_trace(path: Path, model: ModelConfig, grid: Grid,
               sampler_config=None) -> PosteriorSamples:
    """Rebuild PosteriorSamples from a trace.csv written by write_trace."""
    from .mcmc import SamplerConfig

    T, n = model.T, grid.n
    shapes = {
        "y": (T, n), "beta1_mean": (4,), "beta_dyn": (4,), "rho_y": (), "rho": (),
        "tau2_y": (), "tau2_eps": (T - 1,), "a_g": (), "b_g": (), "a_r": (), "b_r": (),
        "c1_gamma": (model.k_bias ** 2,), "c2": (), "sigma2_g": (), "sigma2_r": (),
        "alpha_shift": (), "beta_shift1": (T - 1, model.k_shift ** 2),
        "beta_shift2": (T - 1, model.k_shift ** 2),
    }
    draws: dict[int, dict[str, np.ndarray]] = {}
    order: list[int] = []
    with open(path, newline="", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if header != ["iter", "block", "param", "value"]:
            raise ValueError(f"unexpected trace header {header}")
        for line in f:
            it_s, block, param, value = line.rstrip("\n").split(",")
            it = int(it_s)
            if it not in draws:
                draws[it] = {name: np.zeros(shape) for name, shape in shapes.items()}
                draws[it]["deviance"] = np.zeros(())
                order.append(it)
            if "[" in param:
                name, rest = param.split("[", 1)
                idx = tuple(int(v) for v in rest.rstrip("]").split(","))
                draws[it][name][idx] = float(value)
            else:
                draws[it][param] = np.asarray(float(value))
    if not order:
        raise ValueError(f"no draws in trace file {path}")
    arrays = {
        name: np.stack([draws[it][name] for it in order]) for name in shapes
    }
    deviance = np.array([float(draws[it]["deviance"]) for it in order])
    sc = sampler_config or SamplerConfig(n_iter=len(order) + 1, burn_in=0, thin=1)
    return PosteriorSamples(config=model, sampler=sc, deviance=deviance,
                            acceptance={}, warnings=(), **arrays)


# -- fit ---------------------------------------------------------------------------


def _load_inputs(cfg: RunConfig) -> tuple[ObservationSet, "object"]:
    obs = load_observations(InputPaths.in_dir(cfg.paths.input_dir), cfg.grid, cfg.T)
    obs, n_flagged = screen_gage_zeros(obs, cfg.grid)
    if cfg.paths.covariates:
        cov = load_covariates(cfg.paths.input_dir / cfg.paths.covariates,
                              cfg.paths.input_dir / (cfg.paths.transforms or "transforms.csv"),
                              cfg.grid)
    else:
        cov = build_covariates(obs, cfg.grid)
    return obs, cov, n_flagged


def _fit_one(cfg: RunConfig, obs: ObservationSet, cov, rep: int,
             holdout: list[HoldoutRecord] | None) -> dict:
    out = cfg.paths.output_dir
    suffix = f"_r{rep}" if cfg.holdout.fraction > 0 else ""
    seed = _rep_seed(cfg.sampler.seed, rep)
    t0 = time.time()
    samples = run_chain(cfg.sampler, obs, cov, cfg.model, seed=seed)
    write_trace(samples, out / f"trace{suffix}.csv")
    if holdout is not None:
        with open(out / f"holdout{suffix}.csv", "w", newline="\n", encoding="utf-8") as f:
            f.write("kind,label,cell,t,observed\n")
            for r in holdout:
                f.write(f"{r.kind},{r.label},{r.cell},{r.t},{r.observed!r}\n")
    evaluator = PosteriorEvaluator(obs, cov, cfg.model)
    dic_vals = products.dic(samples, evaluator.deviance)
    if rep == 0:
        products.write_dic_txt(dic_vals, out / "dic.txt")
    report = {
        "rep": rep,
        "seed": seed,
        "runtime_s": round(time.time() - t0, 3),
        "acceptance": {k: round(v, 4) for k, v in samples.acceptance.items()},
        "warnings": list(samples.warnings),
        "dic": dic_vals[0], "d_bar": dic_vals[1], "p_d": dic_vals[2],
        "mean_shift_ms": mean_shift_ms(products.posterior_mean_state(samples), cov),
    }
    return report


def cmd_fit(cfg: RunConfig) -> int:
    out = cfg.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    obs, cov, n_flagged = _load_inputs(cfg)
    reports = []
    if cfg.holdout.fraction > 0:
        reps = cfg.holdout.repetitions
        jobs = []
        for rep in range(reps):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.holdout.seed, rep]))
            obs_fit, holdout = split_holdout(obs, cfg.holdout.fraction, rng)
            jobs.append((rep, obs_fit, holdout))
        workers = _worker_count()
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_fit_one, cfg, obs_fit, cov, rep, holdout)
                        for rep, obs_fit, holdout in jobs]
                reports = [f.result() for f in futs]
        else:
            for rep, obs_fit, holdout in jobs:
                reports.append(_fit_one(cfg, obs_fit, cov, rep, holdout))
    else:
        reports.append(_fit_one(cfg, obs, cov, 0, None))
    with open(out / "report.json", "w", newline="\n", encoding="utf-8") as f:
        json.dump({"n_gage_zeros_flagged": n_flagged, "fits": reports}, f,
                  indent=2, sort_keys=True)
        f.write("\n")
    print(f"fit complete: {len(reports)} chain(s), outputs in {out}")
    return 0


# -- predict -----------------------------------------------------------------------


def write_pgm(values: np.ndarray, grid: Grid, path: Path, sidecar: Path) -> None:
    """P2 portable graymap of one field (row 0 = northernmost cells)."""
    vmin = float(np.min(values))
    vmax = float(np.max(values))
    span = vmax - vmin
    with open(path, "w", newline="\n", encoding="utf-8") as f:
        f.write(f"P2\n{grid.nx} {grid.ny}\n255\n")
        for y in range(grid.ny - 1, -1, -1):
            row = values[y * grid.nx : (y + 1) * grid.nx]
            if span > 0:
                gray = np.rint((row - vmin) / span * 255).astype(int)
            else:
                gray = np.zeros(grid.nx, dtype=int)
            f.write(" ".join(str(v) for v in gray) + "\n")
    with open(sidecar, "w", newline="\n", encoding="utf-8") as f:
        f.write("vmin,vmax\n")
        f.write(f"{vmin!r},{vmax!r}\n")


def read_pgm(path: Path, sidecar: Path, grid: Grid) -> np.ndarray:
    with open(sidecar, newline="", encoding="utf-8") as f:
        f.readline()
        vmin, vmax = (float(v) for v in f.readline().split(","))
    tokens: list[str] = []
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == "P2"
        f.readline()
        f.readline()
        for line in f:
            tokens.extend(line.split())
    gray = np.array([int(v) for v in tokens], dtype=float).reshape(grid.ny, grid.nx)
    values = np.empty(grid.n)
    for y in range(grid.ny):
        values[(grid.ny - 1 - y) * grid.nx : (grid.ny - y) * grid.nx] = gray[y]
    return vmin + values / 255.0 * (vmax - vmin) if vmax > vmin else np.full(grid.n, vmin)


def cmd_predict(cfg: RunConfig) -> int:
    out = cfg.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    suffix = "_r0" if cfg.holdout.fraction > 0 else ""
    trace_path = out / f"trace{suffix}.csv"
    if not trace_path.exists():
        print(f"error: trace file {trace_path} not found; run fit first", file=sys.stderr)
        return 1
    samples = read_trace(trace_path, cfg.model, cfg.grid)
    obs = load_observations(InputPaths.in_dir(cfg.paths.input_dir), cfg.grid, cfg.T)
    gage_cells = sorted({g.cell for g in obs.gages})
    rainmap = products.posterior_rain_map(samples)
    probmap = products.zero_prob_map(samples, gage_cells)
    for t in range(cfg.T):
        products.write_rainmap_csv(rainmap, t, cfg.grid, out / f"rainmap_t{t}.csv")
        products.write_probmap_csv(probmap, t, cfg.grid, out / f"probmap_t{t}.csv")
        write_pgm(rainmap.mean[t], cfg.grid, out / f"rainmap_t{t}.pgm",
                  out / f"rainmap_t{t}_scale.csv")
    print(f"maps written for {cfg.T} time step(s) in {out}")
    return 0


# -- validate ----------------------------------------------------------------------


def read_holdout(path: Path) -> list[HoldoutRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if header != ["kind", "label", "cell", "t", "observed"]:
            raise ValueError(f"unexpected holdout header {header}")
        for line in f:
            kind, label, cell, t, observed = line.rstrip("\n").split(",")
            records.append(HoldoutRecord(kind=kind, label=label, cell=int(cell),
                                         t=int(t), observed=float(observed)))
    return records


def cmd_validate(cfg: RunConfig) -> int:
    out = cfg.paths.output_dir
    if cfg.holdout.fraction <= 0:
        print("error: validate needs holdout.fraction > 0", file=sys.stderr)
        return 1
    reps = cfg.holdout.repetitions
    per_rep = []
    totals = {"gage": [0, 0], "radar": [0, 0]}
    for rep in range(reps):
        trace_path = out / f"trace_r{rep}.csv"
        holdout_path = out / f"holdout_r{rep}.csv"
        if not trace_path.exists() or not holdout_path.exists():
            print(f"error: missing trace/holdout pair for repetition {rep}", file=sys.stderr)
            return 1
        samples = read_trace(trace_path, cfg.model, cfg.grid)
        holdout = read_holdout(holdout_path)
        if not holdout:
            print(f"error: repetition {rep} has zero holdout records", file=sys.stderr)
            return 1
        _, rows = products.holdout_coverage(samples, holdout, level=0.95,
                                            seed=cfg.holdout.seed, grid=cfg.grid)
        products.write_coverage_csv(rows, out / f"coverage_r{rep}.csv")
        stats = {}
        for kind in ("gage", "radar"):
            kind_rows = [r for r in rows if r["kind"] == kind]
            n_in = sum(r["inside"] for r in kind_rows)
            stats[kind] = (n_in, len(kind_rows))
            totals[kind][0] += n_in
            totals[kind][1] += len(kind_rows)
        per_rep.append(stats)
    with open(out / "coverage_report.csv", "w", newline="\n", encoding="utf-8") as f:
        f.write("rep,stream,n,covered,fraction\n")
        for rep, stats in enumerate(per_rep):
            for kind in ("gage", "radar"):
                n_in, n = stats[kind]
                frac = n_in / n if n else math.nan
                f.write(f"{rep},{kind},{n},{n_in},{frac!r}\n")
        for kind in ("gage", "radar"):
            n_in, n = totals[kind]
            frac = n_in / n if n else math.nan
            f.write(f"pooled,{kind},{n},{n_in},{frac!r}\n")
    for kind in ("gage", "radar"):
        n_in, n = totals[kind]
        if n:
            print(f"pooled {kind} coverage: {n_in}/{n} = {n_in / n:.4f}")
    return 0


# -- entry point -------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="rainfuse",
        description="Gage-radar rainfall fusion: simulate, fit, predict, validate.",
    )
    parser.add_argument("command", choices=["simulate", "fit", "predict", "validate"])
    parser.add_argument("--config", required=True, help="path to the run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the sampler seed")
    parser.add_argument("--preset", default=None,
                        help="override the model preset (model1..model5)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, preset_override=args.preset)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    commands = {"simulate": cmd_simulate, "fit": cmd_fit,
                "predict": cmd_predict, "validate": cmd_validate}
    try:
        return commands[args.command](cfg)
    except Exception as e:  # surface one clean diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
