"""Experiment harness: declarative configs, N independent realizations with
deterministic seeding, and diagnostics outputs.

A config is one JSON file (documented field by field in the README).
Unknown keys are errors so that a typo like "bta" cannot silently fall back
to a default.  Every run m of grid point g draws from the counter-based
stream keyed by (seed, m, g), which makes each output byte a pure function
of (config, seed) regardless of the parallelism degree.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import diagnostics, streams
from .biased import BiasedVariantKind, run_biased
from .diagnostics import RunRecord, record_from_result
from .dynamics import allen_cahn_model, bichannel_model, drifted_bm_model
from .engine import GamsConfig, run_ams
from .variants import bridge_model, exact_k_model

ALGORITHMS = ("ams", "ams-exact-k", "biased-v1", "biased-v2", "direct-mc")
MODELS = ("drifted-bm", "bichannel", "allen-cahn", "gaussian-bridge")
MC_SHARD = 1_000_000


class ConfigError(ValueError):
    """A config file failed validation; the message names the field."""


_TOP_KEYS = {"model", "algorithm", "n_rep", "k", "z_max", "n_runs", "seed",
             "level_strategy", "jobs", "partial_n0", "trace", "grid"}
_MODEL_KEYS = {
    "drifted-bm": {"name", "mu", "beta", "dt", "a", "b", "x0", "path_cap"},
    "bichannel": {"name", "beta", "rho", "dt", "xi", "path_cap"},
    "allen-cahn": {"name", "gamma", "beta", "rho", "dt", "xi", "path_cap"},
    "gaussian-bridge": {"name", "kappa"},
}
_REQUIRED_MODEL_KEYS = {
    "drifted-bm": {"beta"},
    "bichannel": {"beta"},
    "allen-cahn": {"gamma", "beta"},
    "gaussian-bridge": {"kappa"},
}


@dataclass
class ExperimentConfig:
    """Fully validated experiment description."""

    model_name: str
    model_params: dict
    xi_choice: Optional[str]
    algorithm: str
    n_runs: int
    seed: int
    n_rep: Optional[int] = None
    k: Optional[int] = None
    z_max: Optional[float] = None
    level_strategy: str = "full-sort"
    subset_size: Optional[int] = None
    jobs: int = 1
    partial_n0: int = 100
    trace: bool = False
    grid: dict = field(default_factory=dict)

    def build_model(self):
        params = dict(self.model_params)
        if self.model_name == "drifted-bm":
            model = drifted_bm_model(**params)
        elif self.model_name == "bichannel":
            model = bichannel_model(xi_choice=self.xi_choice or "xi1", **params)
        elif self.model_name == "allen-cahn":
            model = allen_cahn_model(xi_choice=self.xi_choice or "xi1", **params)
        elif self.model_name == "gaussian-bridge":
            if self.z_max is None:
                raise ConfigError("field z_max: required for the gaussian-bridge model")
            model = bridge_model(kappa=int(params["kappa"]), z_max=self.z_max)
        else:
            raise ConfigError(f"field model.name: unknown model {self.model_name!r}")
        if self.algorithm == "ams-exact-k":
            if self.model_name == "gaussian-bridge":
                raise ConfigError("field algorithm: ams-exact-k applies to chain models")
            model = exact_k_model(model)
        return model

    def resolved_z_max(self, model) -> float:
        if self.z_max is None:
            return float(model.z_max)
        if self.model_name != "gaussian-bridge" and self.z_max > model.z_max:
            raise ConfigError(
                f"field z_max: {self.z_max} exceeds the model's level bound "
                f"{model.z_max}; the rare set would not lie above z_max")
        return float(self.z_max)

    def gams_config(self, model) -> GamsConfig:
        if self.n_rep is None or self.k is None:
            raise ConfigError("fields n_rep and k: required for splitting algorithms")
        return GamsConfig(
            n_rep=self.n_rep, k=self.k, z_max=self.resolved_z_max(model),
            level_strategy=self.level_strategy, subset_size=self.subset_size,
            seed=self.seed)


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"field {where}{key}: unknown key")


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(raw, _TOP_KEYS, "")
    model_sec = raw.get("model")
    if not isinstance(model_sec, dict) or "name" not in model_sec:
        raise ConfigError("field model: an object with a 'name' key is required")
    name = model_sec["name"]
    if name not in MODELS:
        raise ConfigError(f"field model.name: unknown model {name!r}")
    _reject_unknown(model_sec, _MODEL_KEYS[name], "model.")
    missing = _REQUIRED_MODEL_KEYS[name] - model_sec.keys()
    if missing:
        raise ConfigError(f"field model.{sorted(missing)[0]}: required for {name}")

    algorithm = raw.get("algorithm", "ams")
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"field algorithm: unknown algorithm {algorithm!r}")
    if name == "gaussian-bridge" and algorithm.startswith("biased"):
        raise ConfigError("field algorithm: biased variants apply to chain models")

    xi_choice = model_sec.get("xi")
    params = {k: v for k, v in model_sec.items() if k not in ("name", "xi")}

    strategy = raw.get("level_strategy", "full-sort")
    subset_size = None
    if isinstance(strategy, dict):
        _reject_unknown(strategy, {"kind", "subset_size"}, "level_strategy.")
        subset_size = strategy.get("subset_size")
        strategy = strategy.get("kind", "full-sort")
    if strategy not in ("full-sort", "random-subset"):
        raise ConfigError(f"field level_strategy: unknown kind {strategy!r}")

    n_runs = raw.get("n_runs")
    if not isinstance(n_runs, int) or n_runs < 1:
        raise ConfigError("field n_runs: a positive integer is required")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("field seed: a nonnegative integer is required")

    grid = raw.get("grid", {})
    if not isinstance(grid, dict):
        raise ConfigError("field grid: must be an object of parameter lists")
    for gk, gv in grid.items():
        if not isinstance(gv, list) or not gv:
            raise ConfigError(f"field grid.{gk}: must be a non-empty list")

    cfg = ExperimentConfig(
        model_name=name,
        model_params=params,
        xi_choice=xi_choice,
        algorithm=algorithm,
        n_runs=n_runs,
        seed=seed,
        n_rep=raw.get("n_rep"),
        k=raw.get("k"),
        z_max=raw.get("z_max"),
        level_strategy=strategy,
        subset_size=subset_size,
        jobs=raw.get("jobs", 1),
        partial_n0=raw.get("partial_n0", 100),
        trace=bool(raw.get("trace", False)),
        grid=grid,
    )
    # fail early on bad model parameters / region incompatibilities
    model = cfg.build_model()
    cfg.resolved_z_max(model)
    if cfg.algorithm != "direct-mc":
        cfg.gams_config(model)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return parse_config(raw)


def check_hyp_b(model, rng, n: int = 1000) -> None:
    """Empirical audit that B lies inside the above-z_max level set."""
    sampler = getattr(model, "sample_b_state", None)
    if sampler is None:
        return
    for _ in range(n):
        s = sampler(rng)
        if not float(model.xi(np.atleast_1d(s))) > model.z_max:
            raise ConfigError(
                f"field z_max: sampled B state {s} has level <= z_max; "
                "region/coordinate combination is inconsistent")


def _run_chunk(cfg: ExperimentConfig, lo: int, hi: int, grid_index: int) -> List[RunRecord]:
    model = cfg.build_model()
    records = []
    if cfg.algorithm == "direct-mc":
        from .oracle import direct_mc
        for shard in range(lo, hi):
            base = shard * MC_SHARD
            count = min(MC_SHARD, cfg.n_runs - base)
            rng = streams.oracle_generator(cfg.seed, shard, grid_index)
            try:
                res = direct_mc(model, count, rng)
                records.append(RunRecord(run_index=shard, p_hat=res.value,
                                         p_corr=res.value, q_iter=count,
                                         m_b=res.hits or 0))
            except Exception as exc:  # noqa: BLE001 - crash isolation per shard
                records.append(RunRecord(run_index=shard,
                                         error=f"{type(exc).__name__}: {exc}"))
        return records

    gcfg = cfg.gams_config(model)
    for m in range(lo, hi):
        rng = streams.run_generator(cfg.seed, m, grid_index)
        try:
            if cfg.algorithm == "biased-v1":
                result = run_biased(model, gcfg, BiasedVariantKind.VERSION1, rng)
            elif cfg.algorithm == "biased-v2":
                result = run_biased(model, gcfg, BiasedVariantKind.VERSION2, rng)
            else:
                result = run_ams(model, gcfg, rng)
            records.append(record_from_result(m, result))
        except Exception as exc:  # noqa: BLE001 - crash isolation per run
            records.append(RunRecord(run_index=m, error=f"{type(exc).__name__}: {exc}"))
    return records


def execute_runs(cfg: ExperimentConfig, jobs: Optional[int] = None,
                 grid_index: int = 0) -> List[RunRecord]:
    """All runs of one experiment, in run-index order."""
    jobs = jobs or cfg.jobs
    if cfg.algorithm == "direct-mc":
        total = math.ceil(cfg.n_runs / MC_SHARD)
    else:
        total = cfg.n_runs
    if jobs <= 1 or total == 1:
        return _run_chunk(cfg, 0, total, grid_index)
    bounds = np.linspace(0, total, min(jobs * 4, total) + 1, dtype=int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_chunk, cfg, lo, hi, grid_index)
                   for lo, hi in chunks]
        parts = [f.result() for f in futures]
    records: List[RunRecord] = []
    for part in parts:  # futures submitted in index order
        records.extend(part)
    return records


def _meta(cfg: ExperimentConfig, model, grid_index: int) -> dict:
    return {
        "model": cfg.model_name,
        "model_params": dict(sorted(cfg.model_params.items())),
        "xi": cfg.xi_choice,
        "algorithm": cfg.algorithm,
        "n_rep": cfg.n_rep,
        "k": cfg.k,
        "z_max": cfg.resolved_z_max(model),
        "seed": cfg.seed,
        "grid_index": grid_index,
        "level_strategy": cfg.level_strategy,
    }


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: Optional[int] = None,
                   grid_index: int = 0) -> dict:
    """Execute one experiment and write runs.csv / summary.json / trace.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    check_hyp_b(model, streams.run_generator(cfg.seed, 0, streams.ORACLE_LANE - 1))

    records = execute_runs(cfg, jobs=jobs, grid_index=grid_index)

    if cfg.algorithm == "direct-mc":
        ok = [r for r in records if r.ok]
        hits = sum(r.m_b for r in ok)
        n = sum(r.q_iter for r in ok)
        p = hits / n if n else math.nan
        summary = _meta(cfg, model, grid_index)
        summary.update({
            "n_samples": n,
            "hits": hits,
            "p_mc": p,
            "standard_error": math.sqrt(p * (1 - p) / n) if n and hits else 0.0,
            "degenerate": hits == 0,
            "n_errors": len(records) - len(ok),
        })
    else:
        summary = diagnostics.summary_dict(
            records, partial_n0=cfg.partial_n0, meta=_meta(cfg, model, grid_index))

    diagnostics.write_runs_csv(out / "runs.csv", records)
    diagnostics.write_summary_json(out / "summary.json", summary)
    if cfg.trace and cfg.algorithm != "direct-mc":
        diagnostics.write_trace_csv(
            out / "trace.csv", [r.p_hat for r in records if r.ok])
    return summary


def _apply_grid_point(raw: dict, assignment: dict) -> dict:
    cfg = deepcopy(raw)
    cfg.pop("grid", None)
    for dotted, value in assignment.items():
        node = cfg
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return cfg


def sweep(raw: dict, out_dir, jobs: Optional[int] = None,
          seed: Optional[int] = None) -> List[dict]:
    """Cartesian product of the grid lists; one summary per grid point.

    Grid point g uses streams salted with grid_index g, so adding values to
    a later grid axis never perturbs the runs of existing points.
    """
    base = parse_config(raw)
    if not base.grid:
        raise ConfigError("field grid: sweep requires a non-empty grid")
    keys = list(base.grid.keys())
    summaries = []
    out = Path(out_dir)
    for g, combo in enumerate(itertools.product(*(base.grid[k] for k in keys))):
        assignment = dict(zip(keys, combo))
        point_raw = _apply_grid_point(raw, assignment)
        if seed is not None:
            point_raw["seed"] = seed
        cfg = parse_config(point_raw)
        label = "_".join(f"{k.split('.')[-1]}={v}" for k, v in assignment.items())
        summary = run_experiment(cfg, out / f"grid-{g:03d}_{label}",
                                 jobs=jobs, grid_index=g)
        summary["grid_assignment"] = assignment
        summaries.append(summary)
    with open(out / "sweep.json", "w") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summaries
