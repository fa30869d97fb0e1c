"""Experiment runners: GM benchmark, Gaussian W2 landscape, ablations, single runs.

Every replicate draws from ``SeedSequence([seed, replicate, stream])`` so the
output depends only on the config and the master seed, never on the worker
count or scheduling order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ParameterError
from .gaussian_oracle import sample_random_instance, w2_landscape
from .likelihood import LinearGaussianLikelihood, make_likelihood
from .metrics import sliced_wasserstein
from .priors import ExactDenoiser, GaussianMixturePrior, GaussianPrior, grid_means
from .samplers import (
    ChainResult,
    DpsConfig,
    GradStepRule,
    MgpsConfig,
    PgdmConfig,
    dps_sample,
    mgps_sample,
    pgdm_sample,
)
from .schedule import build_schedule, half_plan, midpoint_plan, plan_from_sequence

log = logging.getLogger(__name__)

__all__ = [
    "BenchmarkConfig",
    "CSV_HEADER",
    "EXPERIMENTS",
    "METHODS",
    "SW_CAP",
    "load_config",
    "load_problem",
    "apply_quick",
    "run_gm_benchmark",
    "run_gauss_w2",
    "run_ablations",
    "run_single",
    "summarize_rows",
]

CSV_HEADER = ["replicate", "method", "d", "dy", "eta", "n_steps", "metric", "diverged", "seconds"]
EXPERIMENTS = ("gm-bench", "gauss-w2", "ablate-eta", "ablate-gradsteps", "sample")
METHODS = ("mgps", "mgps-half", "mgps-ws", "dps", "pgdm")
SW_CAP = 10.0

# stream ids inside a replicate's SeedSequence
_PROBLEM_STREAM = 0
_REFERENCE_STREAM = 999
_SW_STREAM = 1000


@dataclass
class BenchmarkConfig:
    experiment: str = "gm-bench"
    d: int = 20
    d_y: int = 1
    sigma_y: float = 0.05
    n_steps: int = 300
    methods: list[str] = field(default_factory=lambda: ["mgps", "pgdm", "dps"])
    method: str = "mgps"
    eta: float = 0.75
    ell: list[int] | None = None
    lr: float = 0.1
    grad_steps: dict[str, int] | int | None = None
    warm_start: int | None = None
    n_mc: int = 1
    zeta: list[float] = field(default_factory=lambda: [0.1, 0.3, 1.0])
    pgdm_weight: str = "sqrt_prod"
    pgdm_guidance: str = "pinv"
    samples: int = 1000
    replicates: int = 100
    slices: int = 10000
    sw_order: float = 2.0
    sw_aggregate: str = "rms"
    etas: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    grad_step_grid: list[int] = field(default_factory=lambda: [1, 2, 5, 10, 20])
    ablation_eta: float = 0.75
    terminal: str = "delta"
    bootstrap: int = 2000
    seed: int = 0
    workers: int = 1
    timings: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ParameterError(f"experiment: unknown kind {self.experiment!r} (expected one of {EXPERIMENTS})")
        if self.replicates < 1:
            raise ParameterError("replicates: must be >= 1")
        if self.samples < 2 and self.experiment != "sample":
            raise ParameterError("samples: must be >= 2")
        if self.samples < 1:
            raise ParameterError("samples: must be >= 1")
        if not self.sigma_y > 0:
            raise ParameterError("sigma_y: must be positive")
        if self.d < 1 or self.d_y < 1 or self.n_steps < 1 or self.slices < 1 or self.workers < 1:
            raise ParameterError("d, d_y, n_steps, slices and workers must be positive")
        for m in self.methods:
            if m not in METHODS:
                raise ParameterError(f"methods: unknown method {m!r} (expected one of {METHODS})")
        if self.method not in METHODS:
            raise ParameterError(f"method: unknown method {self.method!r}")
        if not self.etas:
            raise ParameterError("etas: grid is empty")
        if any(not 0.0 <= e <= 1.0 for e in self.etas + [self.eta, self.ablation_eta]):
            raise ParameterError("eta values must lie in [0, 1]")
        if any(z < 0 or math.isnan(z) for z in self.zeta) or not self.zeta:
            raise ParameterError("zeta: need a nonempty list of nonnegative values")
        if any(m < 1 for m in self.grad_step_grid):
            raise ParameterError("grad_step_grid: counts must be >= 1")

    def step_rule(self) -> GradStepRule:
        if self.grad_steps is None:
            return GradStepRule()
        if isinstance(self.grad_steps, int):
            return GradStepRule.uniform(self.grad_steps)
        return GradStepRule(**self.grad_steps)


def load_config(path: str | Path | None, **overrides) -> BenchmarkConfig:
    """Parse a JSON config; unknown keys are rejected."""
    data: dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ParameterError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(BenchmarkConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ParameterError(f"unknown config key(s): {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return BenchmarkConfig(**data)
    except TypeError as exc:
        raise ParameterError(f"bad config value: {exc}") from None


def apply_quick(cfg: BenchmarkConfig) -> BenchmarkConfig:
    return dataclasses.replace(cfg, replicates=30, samples=1000, slices=2000)


# --- problems ---------------------------------------------------------------


def gm_problem(cfg: BenchmarkConfig, rng: np.random.Generator):
    """25-component grid mixture, Gaussian ``A`` and an observation of a prior draw."""
    w = rng.uniform(size=25)
    prior = GaussianMixturePrior(w / w.sum(), grid_means(cfg.d), np.ones(25))
    A = rng.standard_normal((cfg.d_y, cfg.d))
    x_star = prior.sample(1, rng)[0]
    y = A @ x_star + cfg.sigma_y * rng.standard_normal(cfg.d_y)
    return prior, LinearGaussianLikelihood(A, y, cfg.sigma_y)


def _problem_field(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParameterError(f"{where}.{key}: missing field")
    return obj[key]


def load_problem(path: str | Path):
    """Read a problem JSON; returns ``(prior, lik)``."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
    try:
        p = _problem_field(data, "prior", "problem")
        kind = _problem_field(p, "kind", "problem.prior")
        if kind == "gaussian":
            prior = GaussianPrior(_problem_field(p, "mean", "problem.prior"), _problem_field(p, "cov", "problem.prior"))
        elif kind == "gmm":
            prior = GaussianMixturePrior(
                _problem_field(p, "weights", "problem.prior"),
                _problem_field(p, "means", "problem.prior"),
                _problem_field(p, "sigmas", "problem.prior"),
            )
        else:
            raise ParameterError(f"problem.prior.kind: unknown prior kind {kind!r} (expected 'gaussian' or 'gmm')")
        lk = _problem_field(data, "likelihood", "problem")
        lik = make_likelihood(
            lk.get("kind", "linear"),
            _problem_field(lk, "A", "problem.likelihood"),
            _problem_field(lk, "y", "problem.likelihood"),
            float(_problem_field(lk, "sigma_y", "problem.likelihood")),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ParameterError) and str(exc).startswith("problem."):
            raise
        raise ParameterError(f"{path}: malformed problem ({exc})") from None
    if lik.dim != prior.dim:
        raise ParameterError(f"problem.likelihood.A: {lik.dim} columns but the prior has dimension {prior.dim}")
    return prior, lik


# --- method variants ---------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    method: str
    tag: str
    run: Callable[..., ChainResult]


def _mgps_config(cfg: BenchmarkConfig, plan, rule=None, warm_start=None) -> MgpsConfig:
    return MgpsConfig(plan, rule or cfg.step_rule(), cfg.lr, warm_start, cfg.n_mc)


def _method_variants(cfg: BenchmarkConfig, name: str) -> list[Variant]:
    n = cfg.n_steps
    if name in ("mgps", "mgps-ws"):
        if cfg.ell is not None:
            plan, tag = plan_from_sequence(cfg.ell, "custom"), "custom"
        else:
            plan, tag = midpoint_plan(n, cfg.eta), f"{cfg.eta:g}"
        ws = None
        if name == "mgps-ws":
            ws = cfg.warm_start if cfg.warm_start is not None else max(1, (3 * n) // 4)
        mc = _mgps_config(cfg, plan, warm_start=ws)
        return [Variant(name, tag, lambda den, lik, s, rng, N, mc=mc: mgps_sample(den, lik, s, mc, rng, N))]
    if name == "mgps-half":
        mc = _mgps_config(cfg, half_plan(n))
        return [Variant(name, "half", lambda den, lik, s, rng, N, mc=mc: mgps_sample(den, lik, s, mc, rng, N))]
    if name == "dps":
        out = []
        for z in cfg.zeta:
            dc = DpsConfig(float(z))
            out.append(Variant(name, f"zeta={z:g}", lambda den, lik, s, rng, N, dc=dc: dps_sample(den, lik, s, dc, rng, N)))
        return out
    if name == "pgdm":
        pc = PgdmConfig(cfg.pgdm_weight, cfg.pgdm_guidance)
        return [Variant(name, cfg.pgdm_weight, lambda den, lik, s, rng, N, pc=pc: pgdm_sample(den, lik, s, pc, rng, N))]
    raise ParameterError(f"unknown method {name!r}")


def _variants(cfg: BenchmarkConfig) -> list[Variant]:
    if cfg.experiment == "gm-bench":
        return [v for m in cfg.methods for v in _method_variants(cfg, m)]
    n = cfg.n_steps
    if cfg.experiment == "ablate-eta":
        out = []
        for eta in cfg.etas:
            mc = _mgps_config(cfg, midpoint_plan(n, eta))
            out.append(Variant("mgps", f"{eta:g}", lambda den, lik, s, rng, N, mc=mc: mgps_sample(den, lik, s, mc, rng, N)))
        return out
    if cfg.experiment == "ablate-gradsteps":
        plan = midpoint_plan(n, cfg.ablation_eta)
        out = []
        for m in cfg.grad_step_grid:
            mc = _mgps_config(cfg, plan, rule=GradStepRule.uniform(m))
            out.append(Variant(f"mgps-M{m}", f"{cfg.ablation_eta:g}",
                               lambda den, lik, s, rng, N, mc=mc: mgps_sample(den, lik, s, mc, rng, N)))
        return out
    raise ParameterError(f"experiment {cfg.experiment!r} has no sampler variants")


# --- replicate workers ---------------------------------------------------------


def _stream(seed: int, replicate: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, replicate, stream]))


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _gm_replicate(cfg: BenchmarkConfig, r: int) -> list[list[str]]:
    sched = build_schedule(n=cfg.n_steps)
    prior, lik = gm_problem(cfg, _stream(cfg.seed, r, _PROBLEM_STREAM))
    den = ExactDenoiser(prior, sched)
    ref = prior.posterior(lik.A, lik.y, lik.sigma_y).sample(cfg.samples, _stream(cfg.seed, r, _REFERENCE_STREAM))
    rows = []
    for i, v in enumerate(_variants(cfg)):
        t0 = time.perf_counter()
        res = v.run(den, lik, sched, _stream(cfg.seed, r, i + 1), cfg.samples)
        diverged = res.n_diverged > 0
        if diverged:
            metric = SW_CAP
        else:
            sw = sliced_wasserstein(res.x0, ref, cfg.slices, _stream(cfg.seed, r, _SW_STREAM + i),
                                    order=cfg.sw_order, aggregate=cfg.sw_aggregate)
            metric = min(sw, SW_CAP)
        secs = time.perf_counter() - t0 if cfg.timings else 0.0
        rows.append([str(r), v.method, str(cfg.d), str(cfg.d_y), v.tag, str(cfg.n_steps), _fmt(metric),
                     str(int(diverged)), f"{secs:.3f}"])
    return rows


def _w2_replicate(cfg: BenchmarkConfig, r: int) -> list[list[str]]:
    sched = build_schedule(n=cfg.n_steps)
    prior, lik = sample_random_instance(cfg.d, _stream(cfg.seed, r, _PROBLEM_STREAM))
    t0 = time.perf_counter()
    land = w2_landscape(prior, lik, sched, cfg.etas, terminal=cfg.terminal)
    secs = (time.perf_counter() - t0) / len(cfg.etas) if cfg.timings else 0.0
    return [[str(r), "surrogate", str(cfg.d), str(lik.dim_y), f"{e:g}", str(cfg.n_steps), _fmt(w), "0", f"{secs:.3f}"]
            for e, w in land.points]


def _replicate_task(args) -> list[list[str]]:
    kind, cfg, r = args
    return (_w2_replicate if kind == "w2" else _gm_replicate)(cfg, r)


def _run_replicates(cfg: BenchmarkConfig, kind: str) -> list[list[str]]:
    tasks = [(kind, cfg, r) for r in range(cfg.replicates)]
    if cfg.workers == 1:
        chunks = [_replicate_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_replicate_task, tasks))
    rows = [row for chunk in chunks for row in chunk]
    # stable sort keeps the variant order inside a (replicate, method) pair
    rows.sort(key=lambda row: (int(row[0]), row[1]))
    return rows


def _write_csv(rows: list[list[str]], out_path: str | Path) -> None:
    out_path = Path(out_path)
    if out_path.parent and not out_path.parent.exists():
        raise FileNotFoundError(f"output directory {out_path.parent} does not exist")
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)


def _summary_path(out_path: str | Path) -> Path:
    p = Path(out_path)
    return p.with_name(p.stem + ".summary.json")


def _write_summary(summary: dict, out_path: str | Path) -> None:
    with open(_summary_path(out_path), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- aggregation ---------------------------------------------------------------


def _ci(values: np.ndarray, n_boot: int, rng: np.random.Generator) -> dict:
    R = values.size
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if R > 1 else 0.0
    half = 1.96 * sd / math.sqrt(R)
    out = {"n": R, "mean": mean, "sd": sd, "ci95": half, "lo": mean - half, "hi": mean + half}
    if n_boot > 0 and R > 1:
        boots = values[rng.integers(0, R, size=(n_boot, R))].mean(axis=1)
        out["boot_lo"], out["boot_hi"] = (float(q) for q in np.quantile(boots, [0.025, 0.975]))
    return out


def summarize_rows(rows: list[list[str]], n_boot: int = 2000, seed: int = 0) -> dict:
    """Per (method, eta) mean with normal and bootstrap 95% intervals.

    ``best`` maps each method to its lowest-mean tag (this is how DPS's zeta
    grid is resolved).
    """
    groups: dict[tuple[str, str], list[float]] = {}
    div: dict[tuple[str, str], int] = {}
    for row in rows:
        key = (row[1], row[4])
        groups.setdefault(key, []).append(float(row[6]))
        div[key] = div.get(key, 0) + int(row[7])
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC1]))
    cells = {}
    for key in sorted(groups):
        stats = _ci(np.asarray(groups[key]), n_boot, rng)
        stats["diverged"] = div[key]
        cells[f"{key[0]}|{key[1]}"] = dict(method=key[0], eta=key[1], **stats)
    best: dict[str, dict] = {}
    for cell in cells.values():
        cur = best.get(cell["method"])
        if cur is None or cell["mean"] < cur["mean"]:
            best[cell["method"]] = cell
    return {"cells": cells, "best": best}


# --- experiments -----------------------------------------------------------------


def _report(summary: dict) -> None:
    for name, cell in summary["best"].items():
        log.info("%-10s eta=%-9s mean %.3f +/- %.3f (diverged %d)", name, cell["eta"], cell["mean"], cell["ci95"],
                 cell["diverged"])


def run_gm_benchmark(cfg: BenchmarkConfig, out_path: str | Path) -> dict:
    """Sliced-Wasserstein comparison of the samplers on random GM problems."""
    if cfg.experiment not in ("gm-bench", "ablate-eta", "ablate-gradsteps"):
        cfg = dataclasses.replace(cfg, experiment="gm-bench")
    rows = _run_replicates(cfg, "gm")
    _write_csv(rows, out_path)
    summary = summarize_rows(rows, cfg.bootstrap, cfg.seed)
    summary["experiment"] = cfg.experiment
    _write_summary(summary, out_path)
    _report(summary)
    return summary


def run_ablations(cfg: BenchmarkConfig, out_path: str | Path) -> dict:
    """``ablate-eta`` sweeps ``floor(eta k)`` plans; ``ablate-gradsteps`` sweeps uniform step counts."""
    if cfg.experiment not in ("ablate-eta", "ablate-gradsteps"):
        raise ParameterError("run_ablations needs experiment 'ablate-eta' or 'ablate-gradsteps'")
    return run_gm_benchmark(cfg, out_path)


def run_gauss_w2(cfg: BenchmarkConfig, out_path: str | Path) -> dict:
    """W2 landscape over ``cfg.etas`` for ``cfg.replicates`` random Gaussian instances."""
    rows = _run_replicates(cfg, "w2")
    _write_csv(rows, out_path)
    etas = np.asarray(cfg.etas, dtype=float)
    W = np.array([float(r[6]) for r in rows]).reshape(cfg.replicates, etas.size)
    star = etas[np.argmin(W, axis=1)]
    summary = {
        "experiment": "gauss-w2",
        "etas": etas.tolist(),
        "mean": W.mean(axis=0).tolist(),
        "q10": np.quantile(W, 0.1, axis=0).tolist(),
        "q90": np.quantile(W, 0.9, axis=0).tolist(),
        "eta_star": star.tolist(),
        "eta_star_median": float(np.median(star)),
        "eta_star_hist": {f"{e:g}": int(np.sum(star == e)) for e in etas},
    }
    if 1.0 in cfg.etas:
        w1 = W[:, cfg.etas.index(1.0)]
        summary["frac_better_than_eta1"] = float(np.mean(W.min(axis=1) < w1))
    _write_summary(summary, out_path)
    log.info("median eta* %.3f", summary["eta_star_median"])
    return summary


def _single_runner(cfg: BenchmarkConfig) -> Variant:
    variants = _method_variants(cfg, cfg.method)
    if cfg.method == "dps" and len(variants) > 1:
        log.info("sample: using the first zeta of the grid (%s)", variants[0].tag)
    return variants[0]


def run_single(cfg: BenchmarkConfig, problem_path: str | Path, out_path: str | Path) -> ChainResult:
    """Run one method on a problem file and write its samples, one row per chain."""
    prior, lik = load_problem(problem_path)
    sched = build_schedule(n=cfg.n_steps)
    v = _single_runner(cfg)
    res = v.run(ExactDenoiser(prior, sched), lik, sched, _stream(cfg.seed, 0, 1), cfg.samples)
    out_path = Path(out_path)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(prior.dim)])
        for row in res.x0:
            writer.writerow([_fmt(v) for v in row])
    print(f"{cfg.method}: {res.n_diverged} of {cfg.samples} chains diverged")
    if res.n_diverged:
        print(f"note: diverged runs count as SW = {SW_CAP:g} in benchmarks")
    return res
