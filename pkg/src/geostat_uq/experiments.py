"""Config-driven experiment pipeline behind the command line.

A run goes generate-truth -> simulate-data -> MAP -> eigensolve ->
posterior -> criteria, timing each stage and writing CSV outputs plus a
JSON manifest. Sweeps and design comparisons repeat parts of that pipeline
once per point, each point in its own output subdirectory, optionally on a
thread pool.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import io
from .config import ConfigError, ExperimentConfig
from .criteria import evaluate_criteria
from .grid import MaternKernel, RegularGrid2D
from .hydro import HydroModel, standard_hydro_setup
from .inversion import InverseProblem, LinearModel, solve_linear_map, solve_quasilinear_map
from .posterior import build_posterior, posterior_variance
from .prior import PriorOperator
from .randeig import GhepProblem, randomized_ghep
from .raytomo import assemble_h, read_setup_csv, standard_setup

log = logging.getLogger(__name__)

CRITERIA = ("phi_A", "phi_C", "phi_D_tilde", "phi_E", "trace_S_inv")


@dataclass
class RunManifest:
    config_hash: str
    seeds: dict
    timings: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    status: str = "running"
    error: str = ""
    children: list = field(default_factory=list)

    def write(self, out: Path) -> Path:
        path = Path(out) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=float) + "\n")
        return path


class _Stage:
    """Times a pipeline stage and records which one failed."""

    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.manifest.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not self.manifest.error:
            self.manifest.status = "failed"
            self.manifest.error = f"{self.name}: {type(exc).__name__}: {exc}"
        return False


def _seeds(cfg: ExperimentConfig) -> dict:
    return {"truth": cfg["truth"]["seed"], "noise": cfg["noise"]["seed"],
            "eigen": cfg["eigen"]["seed"], "criteria": cfg["criteria"]["seed"]}


def build_grid(cfg: ExperimentConfig) -> RegularGrid2D:
    return RegularGrid2D.unit_square(cfg.nx, cfg.ny, cfg["grid"]["size"])


def build_kernel(cfg: ExperimentConfig) -> MaternKernel:
    """Prior kernel; for hydro problems ``L`` enters as ``exp(-r/(4L))``."""
    k = cfg["kernel"]
    L = 4.0 * k["L"] if cfg.kind == "hydro" else k["L"]
    return MaternKernel(k["nu"], k["theta"], L)


@dataclass
class Instance:
    """Everything the pipeline derives from a config before inversion."""

    grid: RegularGrid2D
    prior: PriorOperator
    X: np.ndarray
    truth: np.ndarray
    model: object
    y: np.ndarray
    noise_var: float

    @property
    def problem(self) -> InverseProblem:
        return InverseProblem(self.prior, self.X, self.noise_var, self.model, self.y)


def build_model(cfg: ExperimentConfig, grid: RegularGrid2D, setup: dict | None = None):
    st = dict(cfg["setup"], **(setup or {}))
    st.pop("name", None)
    if cfg.kind == "ray":
        if st["points_file"]:
            rays = read_setup_csv(st["points_file"], grid)
        else:
            rays = standard_setup(grid, st["n_sou"], st["n_rec"],
                                  source_span=tuple(st["source_span"]),
                                  receiver_span=tuple(st["receiver_span"]))
        return LinearModel(assemble_h(rays))
    hs = standard_hydro_setup(grid, tuple(st["sources"]), tuple(st["observations"]), st["Q"],
                              st["margin"])
    return HydroModel(hs)


def build_instance(cfg: ExperimentConfig, setup: dict | None = None) -> Instance:
    """Grid, prior, seeded truth and noisy synthetic data.

    Noise is Gaussian with standard deviation ``fraction * RMS(h(truth))``.
    """
    grid = build_grid(cfg)
    prior = PriorOperator(grid, build_kernel(cfg))
    truth = cfg["truth"]["mean"] + prior.sample_realization(cfg["truth"]["seed"])
    model = build_model(cfg, grid, setup)
    y0 = model.forward(truth)
    sigma = cfg["noise"]["fraction"] * float(np.sqrt(np.mean(y0 ** 2)))
    if not sigma > 0:
        raise ConfigError("noise-free data are identically zero; noise level undefined")
    rng = np.random.default_rng(cfg["noise"]["seed"])
    y = y0 + sigma * rng.standard_normal(y0.shape[0])
    X = np.ones((grid.m, 1))
    return Instance(grid, prior, X, truth, model, y, sigma ** 2)


def misfit_hessian(J, noise_var: float) -> LinearOperator:
    """``J^T J / sigma^2`` as a matrix-free operator."""
    m = J.shape[1]

    def mm(V):
        return np.asarray(J.T @ (J @ np.asarray(V, dtype=float))) / noise_var

    return LinearOperator((m, m), matvec=mm, matmat=mm, rmatvec=mm, dtype=np.float64)


def solve_map(cfg: ExperimentConfig, inst: Instance):
    mp = cfg["map"]
    opts = dict(tol=mp["tol"], restart=mp["restart"], maxiter=mp["maxiter"])
    if inst.model.is_linear:
        return solve_linear_map(inst.problem, **opts)
    return solve_quasilinear_map(inst.problem, max_gn=mp["max_gn"], step_tol=mp["step_tol"],
                                 line_search=mp["line_search"], **opts)


def _jacobian(model, s):
    if model.is_linear:
        return model.H
    return model.jacobian(s)


def eigensolve(cfg: ExperimentConfig, inst: Instance, s_lin):
    e = cfg["eigen"]
    Hred = misfit_hessian(_jacobian(inst.model, s_lin), inst.noise_var)
    return randomized_ghep(GhepProblem(Hred, inst.prior, e["k"], e["p"], e["seed"]),
                           single_pass=e["single_pass"])


def _prepare(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: ExperimentConfig, out: Path) -> Path:
    path = out / "config_resolved.json"
    path.write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
    return path


def _finish(manifest: RunManifest, out: Path, paths) -> RunManifest:
    manifest.outputs = sorted(p.name if p.parent == out else str(p.relative_to(out))
                              for p in paths)
    if manifest.status == "running":
        manifest.status = "ok"
    manifest.write(out)
    return manifest


def run_experiment(cfg: ExperimentConfig, out=None, setup: dict | None = None) -> RunManifest:
    """Full pipeline for one configuration.

    Writes ``truth.csv``, ``reconstruction.csv``, ``variance.csv``,
    ``spectrum.csv``, ``criteria.csv``, ``config_resolved.json`` and
    ``manifest.json`` to ``out`` (default ``[run] out``). On failure the
    manifest is still written, with ``status = "failed"``, and the error is
    re-raised.
    """
    out = _prepare(cfg["run"]["out"] if out is None else out)
    manifest = RunManifest(cfg.hash(), _seeds(cfg))
    paths = [_write_config(cfg, out)]
    try:
        with _Stage(manifest, "assembly"):
            inst = build_instance(cfg, setup)
        with _Stage(manifest, "map"):
            result = solve_map(cfg, inst)
        manifest.iterations["gmres"] = [r.iterations for r in result.solve_reports]
        manifest.iterations["gauss_newton"] = result.gn_iterations
        with _Stage(manifest, "eigensolve"):
            eigs = eigensolve(cfg, inst, result.s_hat)
        with _Stage(manifest, "posterior"):
            rep = build_posterior(inst.prior, eigs, inst.X, cfg["posterior"]["cutoff"])
            var = posterior_variance(rep)
        report = None
        if cfg["criteria"]["enabled"]:
            with _Stage(manifest, "criteria"):
                c = cfg["criteria"]
                report = evaluate_criteria(rep, probes=c["probes"], seed=c["seed"],
                                           e_tol=c["e_tol"])
    except Exception:
        _finish(manifest, out, paths)
        raise

    g = inst.grid
    paths += [io.write_raster(out / "truth.csv", g, inst.truth),
              io.write_raster(out / "reconstruction.csv", g, result.s_hat),
              io.write_raster(out / "variance.csv", g, var),
              io.write_spectrum(out / "spectrum.csv", eigs.lambdas, cfg["posterior"]["cutoff"])]
    if report is not None:
        paths.append(io.write_table(out / "criteria.csv", [dict(design="run", **report.as_row())]))
    err = np.linalg.norm(result.s_hat - inst.truth) / np.linalg.norm(inst.truth)
    manifest.summary = {"relative_error": float(err), "retained_modes": rep.k,
                        "beta_hat": [float(b) for b in result.beta_hat],
                        "objective": float(result.objective), "converged": bool(result.converged)}
    if report is not None:
        manifest.summary["criteria"] = report.as_row()
    return _finish(manifest, out, paths)


def _sweep_config(cfg: ExperimentConfig, kind: str, value) -> ExperimentConfig:
    if kind == "nu":
        return cfg.replace("kernel", nu=float(value))
    if kind == "grid":
        return cfg.replace("grid", nx=int(value), ny=int(value))
    if kind == "measurements":
        if cfg.kind == "ray":
            return cfg.replace("setup", n_sou=int(value), n_rec=int(value))
        return cfg.replace("setup", observations=[int(value), int(value)])
    raise ConfigError(f"unknown sweep kind {kind!r}")


def _spectrum_point(cfg: ExperimentConfig, out: Path, label: str):
    sub = _prepare(out / label)
    t0 = time.perf_counter()
    inst = build_instance(cfg)
    t1 = time.perf_counter()
    # nonlinear models are linearized at the prior mean
    s_lin = inst.X[:, 0] * cfg["truth"]["mean"]
    eigs = eigensolve(cfg, inst, s_lin)
    t2 = time.perf_counter()
    cutoff = cfg["posterior"]["cutoff"]
    path = io.write_spectrum(sub / "spectrum.csv", eigs.lambdas, cutoff)
    return {"label": label, "m": inst.grid.m, "n": inst.y.shape[0], "k": eigs.k,
            "count_above": eigs.count_above(cutoff), "assembly_s": t1 - t0,
            "eigensolve_s": t2 - t1}, path


def run_spectrum_study(cfg: ExperimentConfig, kind: str | None = None, values=None, out=None,
                       workers: int | None = None) -> RunManifest:
    """Eigensolve across a sweep of ``nu``, grid sizes or measurement counts.

    Writes ``<label>/spectrum.csv`` per point and ``summary.csv`` with the
    count of eigenvalues above the cutoff for each point.
    """
    kind = kind or cfg["sweep"]["kind"]
    values = list(cfg["sweep"]["values"] if values is None else values)
    if not kind:
        raise ConfigError("spectrum study needs a sweep kind (nu, grid or measurements)")
    if not values:
        raise ConfigError("empty sweep")
    points = [(f"{kind}_{v}", _sweep_config(cfg, kind, v)) for v in values]
    out = _prepare(cfg["run"]["out"] if out is None else out)
    manifest = RunManifest(cfg.hash(), _seeds(cfg))
    paths = [_write_config(cfg, out)]
    workers = workers or cfg["run"]["workers"]
    try:
        with _Stage(manifest, "sweep"):
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda p: _spectrum_point(p[1], out, p[0]), points))
    except Exception:
        _finish(manifest, out, paths)
        raise
    rows = []
    for (label, _), (row, path) in zip(points, results):
        manifest.timings[label] = row.pop("assembly_s") + row.pop("eigensolve_s")
        rows.append({"value": label.split("_", 1)[1], **row})
        paths.append(path)
    paths.append(io.write_table(out / "summary.csv", rows))
    manifest.summary = {"kind": kind, "counts": [r["count_above"] for r in rows]}
    return _finish(manifest, out, paths)


def rank_designs(rows: list[dict]) -> list[dict]:
    """Per criterion, design names ordered from smallest to largest value."""
    ranking = []
    for crit in CRITERIA:
        order = sorted(rows, key=lambda r: (r[crit], r["design"]))
        vals = [r[crit] for r in rows]
        hi = max(abs(v) for v in vals)
        margin = (max(vals) - min(vals)) / hi if hi > 0 else 0.0
        ranking.append({"criterion": crit, "order": " < ".join(r["design"] for r in order),
                        "best": order[0]["design"], "relative_margin": float(margin)})
    return ranking


def _design_point(cfg: ExperimentConfig, design: dict, out: Path):
    name = design["name"]
    manifest = run_experiment(cfg, out / name, setup=design)
    return manifest, {"design": name, **manifest.summary["criteria"]}


def run_design_comparison(cfg: ExperimentConfig, designs=None, out=None,
                          workers: int | None = None) -> RunManifest:
    """Criteria for two or more measurement designs under one prior.

    Each design is a dict of ``[setup]`` overrides plus a ``name``. Writes
    one full run per design (subdirectory ``<name>``), ``criteria.csv`` with
    one row per design and ``ranking.csv`` ordering designs per criterion.
    """
    designs = list(cfg.designs if designs is None else designs)
    if len(designs) < 2:
        raise ConfigError("design comparison needs at least two designs")
    names = [d.get("name") for d in designs]
    if None in names or len(set(names)) != len(names):
        raise ConfigError("designs need distinct names")
    cfg = cfg.replace("criteria", enabled=True)
    out = _prepare(cfg["run"]["out"] if out is None else out)
    manifest = RunManifest(cfg.hash(), _seeds(cfg))
    paths = [_write_config(cfg, out)]
    workers = workers or cfg["run"]["workers"]
    try:
        with _Stage(manifest, "designs"):
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda d: _design_point(cfg, d, out), designs))
    except Exception:
        _finish(manifest, out, paths)
        raise
    rows = [row for _, row in results]
    for d, (child, _) in zip(designs, results):
        manifest.timings[d["name"]] = sum(child.timings.values())
        manifest.children.append(d["name"])
    ranking = rank_designs(rows)
    paths += [io.write_table(out / "criteria.csv", rows),
              io.write_table(out / "ranking.csv", ranking)]
    manifest.summary = {"criteria": rows, "ranking": ranking}
    return _finish(manifest, out, paths)


def format_table(rows: list[dict]) -> str:
    """Plain-text criteria table, one column per design."""
    names = [r["design"] for r in rows]
    width = max(12, *(len(n) for n in names))
    lines = ["criterion".ljust(14) + "".join(n.rjust(width + 2) for n in names)]
    for crit in CRITERIA:
        lines.append(crit.ljust(14) + "".join(f"{r[crit]:{width + 2}.6g}" for r in rows))
    return "\n".join(lines)
