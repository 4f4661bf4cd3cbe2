"""Experiment grid: data generation, fitting, prediction, metrics and tables.

A grid cell is one (proportion, noise, method, seed) combination.  Every cell
produces exactly one row in ``results.csv``; failures are recorded with an
error tag and the remaining cells still run.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import hybrid, kan_ode, metrics, neural_ode, sindy, spatial
from .errors import ConfigError
from .integrator import TimeGrid, Trajectory, add_noise, simulate, split, train_size
from .models import DEFAULT_T_MAX, ModelKind, default_model

log = logging.getLogger(__name__)

METHODS = ("sindy", "node1", "node2", "kanode", "hybrid1d", "hybrid2d")
OUT_ENV = "ECOLEARN_OUT"
NOISY_SMOOTHING = (15, 3)  # Savitzky-Golay window/order for warm-start rates on noised data


def default_out() -> str:
    return os.environ.get(OUT_ENV, "runs")


@dataclass
class ExperimentConfig:
    """Grid description; serialized as flat JSON with these field names."""

    model: str = "SIR"
    t_max: float | None = None  # None: the model's standard horizon
    n_steps: int = 300
    proportions: list = field(default_factory=lambda: [2 / 3])
    noise: list = field(default_factory=lambda: [0.0])
    methods: list = field(default_factory=lambda: ["sindy"])
    seeds: list = field(default_factory=lambda: [0])
    out: str = field(default_factory=default_out)
    variant: str = "table"  # LVSIS parameter set
    noise_seed: int = 123
    iterations: int | None = None  # rollout iterations for network methods
    sindy_noise: bool = False  # run SINDy on noised data too
    threshold: float = 0.001
    ridge: float | str = "auto"
    tv_weight: float = 0.0
    kappa: float = 1e-5
    extent: float = 10.0
    nodes_1d: int = 10
    nodes_2d: int = 7
    workers: int = 1

    def __post_init__(self):
        try:
            self.model = ModelKind(str(self.model).upper()).value
        except ValueError:
            raise ConfigError(f"unknown model {self.model!r}") from None
        self.proportions = [float(p) for p in self.proportions]
        self.noise = [float(s) for s in self.noise]
        self.methods = [str(m).lower() for m in self.methods]
        self.seeds = [int(s) for s in self.seeds]
        if not self.methods:
            raise ConfigError("methods list is empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if not self.proportions or any(not 0 < p <= 1 for p in self.proportions):
            raise ConfigError(f"proportions must lie in (0, 1], got {self.proportions}")
        if int(self.n_steps) < 2:
            raise ConfigError(f"n_steps must be >= 2, got {self.n_steps}")
        if any(s < 0 for s in self.noise):
            raise ConfigError("noise levels must be >= 0")
        if not self.seeds:
            raise ConfigError("seeds list is empty")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def horizon(self) -> float:
        return float(self.t_max if self.t_max is not None else DEFAULT_T_MAX[ModelKind(self.model)])

    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.horizon, int(self.n_steps))

    def cells(self) -> list:
        return [(p, s, m, seed) for p in self.proportions for s in self.noise
                for m in self.methods for seed in self.seeds]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def run_id(model: str, method: str, p: float, noise: float, seed: int) -> str:
    return f"{model}-{method}-p{p:.4f}-n{noise:g}-s{seed}"


# ---------------------------------------------------------------------------
# fitted models


@dataclass
class FittedModel:
    """Uniform wrapper so the harness can predict and save any learner."""

    method: str
    labels: tuple
    spec: object = None
    theta: object = None
    sparse: object = None
    info: dict = field(default_factory=dict)

    def predict(self, y0, grid: TimeGrid):
        if self.method == "sindy":
            return sindy.simulate_identified(self.sparse, y0, grid)
        if self.method in ("node1", "node2"):
            return neural_ode.predict(self.spec, self.theta, y0, grid, self.labels)
        if self.method == "kanode":
            return kan_ode.predict(self.spec, self.theta, y0, grid, self.labels)
        return hybrid.predict_hybrid(self.spec, self.theta, y0, grid)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"method": self.method, "labels": list(self.labels), "info": self.info}
        if self.method == "sindy":
            self.sparse.save(d / "sindy.json")
            (d / "equations.txt").write_text(sindy.render(self.sparse) + "\n")
        else:
            meta["spec"] = self.spec.to_dict()
            meta["param_count"] = len(self.theta)
            self.theta.save(d / "params")
        (d / "model.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, directory, diffusion=None) -> "FittedModel":
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text())
        method, labels = meta["method"], tuple(meta["labels"])
        if method == "sindy":
            return cls(method, labels, sparse=sindy.SparseModel.load(d / "sindy.json"), info=meta.get("info", {}))
        from .autodiff import ParamVector

        theta = ParamVector.load(d / "params")
        sd = meta["spec"]
        if sd["type"] == "mlp":
            spec = neural_ode.MlpSpec.from_dict(sd)
        elif sd["type"] == "kan":
            spec = kan_ode.KanSpec.from_dict(sd)
        else:
            grid = spatial.Grid(tuple(sd["grid"]["extent"]), tuple(sd["grid"]["shape"]))
            op = diffusion or spatial.assemble_laplacian(grid, np.array(sd["kappa"]))
            spec = hybrid.HybridSpec(op, neural_ode.MlpSpec.from_dict(sd["reaction_net"]),
                                     sd.get("window_length"), sd.get("stride", 5))
        return cls(method, labels, spec, theta, info=meta.get("info", {}))


def _train_config(seed: int, noise: float, iterations: int | None, base=None) -> neural_ode.TrainConfig:
    cfg = base or neural_ode.TrainConfig()
    cfg = replace(cfg, seed=seed)
    if iterations is not None:
        cfg = replace(cfg, iterations=int(iterations))
    if noise > 0:
        cfg = replace(cfg, smooth_window=NOISY_SMOOTHING[0], smooth_order=NOISY_SMOOTHING[1])
    return cfg


def sindy_ridge(labels, train: Trajectory, degree: int, ridge) -> float:
    """``"auto"``: no ridge unless the library matrix is rank-deficient on the data."""
    if ridge != "auto":
        return float(ridge)
    lib = sindy.build_library(labels, degree)
    A = lib.evaluate(train.states)
    return 0.0 if np.linalg.matrix_rank(A) == A.shape[1] else 1e-4


def fit_trajectory(method: str, train: Trajectory, seed: int = 0, noise: float = 0.0,
                   iterations: int | None = None, threshold: float = 0.001, ridge="auto",
                   tv_weight: float = 0.0) -> FittedModel:
    """Fit one of the ODE learners to a training trajectory."""
    m = train.states.shape[1]
    if method == "sindy":
        lam = sindy_ridge(train.labels, train, 2, ridge)
        sm = sindy.fit_sindy(train, 2, threshold, lam, tv_weight)
        return FittedModel(method, train.labels, sparse=sm, info={"ridge_lambda": lam})
    cfg = _train_config(seed, noise, iterations)
    if method in ("node1", "node2"):
        spec = neural_ode.MlpSpec.node1(m) if method == "node1" else neural_ode.MlpSpec.node2(m)
        res = neural_ode.train_node(train, spec, cfg)
    elif method == "kanode":
        res = kan_ode.train_kan(train, kan_ode.KanSpec.default(m), cfg)
    else:
        raise ConfigError(f"{method} is not a trajectory learner")
    return FittedModel(method, train.labels, res.spec, res.theta,
                       info={"best_loss": res.best_loss, "rejected": res.rejected, "train_config": cfg.to_dict()})


def spatial_setup(cfg: ExperimentConfig, method: str):
    model = default_model(cfg.model, cfg.variant)
    if method == "hybrid1d":
        grid = spatial.Grid.line(cfg.extent, cfg.nodes_1d)
    else:
        grid = spatial.Grid.rect(cfg.extent, cfg.extent, cfg.nodes_2d, cfg.nodes_2d)
    op = spatial.assemble_laplacian(grid, cfg.kappa, model.dim)
    return model, grid, op


def fit_fields(train: spatial.FieldSeries, op, seed: int = 0, noise: float = 0.0,
               iterations: int | None = None) -> FittedModel:
    base = hybrid.default_config()
    cfg = _train_config(seed, noise, iterations, base)
    res = hybrid.train_hybrid(train, hybrid.default_spec(op), cfg)
    return FittedModel("hybrid", tuple(train.labels), res.spec, res.theta,
                       info={"best_loss": res.best_loss, "rejected": res.rejected, "train_config": cfg.to_dict()})


# ---------------------------------------------------------------------------
# grid execution


def _write_plot_csv(path, times, ref, pred, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *[f"ref_{l}" for l in labels], *[f"pred_{l}" for l in labels]])
        for t, a, b in zip(times, ref, pred):
            w.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in a), *(f"{v:.17g}" for v in b)])


def _run_cell(cfg: ExperimentConfig, cell) -> dict:
    p, noise, method, seed = cell
    rid = run_id(cfg.model, method, p, noise, seed)
    meta = {"run_id": rid, "model": cfg.model, "method": method, "proportion": f"{p:.4f}",
            "noise": f"{noise:g}", "seed": seed}
    if method == "sindy" and noise > 0 and not cfg.sindy_noise:
        return {**meta, "e_train": "", "e_full": "", "status": "skipped"}
    cell_dir = Path(cfg.out) / "cells" / rid
    try:
        grid = cfg.time_grid()
        n = train_size(grid.n_steps, p)
        if method.startswith("hybrid"):
            model, sgrid, op = spatial_setup(cfg, method)
            ref = spatial.simulate_rd(model, op, spatial.default_initial_field(model, sgrid), grid)
            obs_vals = ref.values
            if noise > 0:
                rng = np.random.default_rng(cfg.noise_seed)
                obs_vals = ref.values + rng.normal(0.0, noise, size=ref.values.shape)
            obs = spatial.FieldSeries(sgrid, grid, obs_vals, ref.labels)
            fitted = fit_fields(obs.head(n), op, seed, noise, cfg.iterations)
            pred = fitted.predict(obs[0], grid)
            ref_v, pred_v = ref.values, pred.values
            # plot data: node-averaged components
            times, ref_plot, pred_plot = grid.times, ref_v.mean(axis=2), pred_v.mean(axis=2)
            labels = ref.labels
        else:
            model = default_model(cfg.model, cfg.variant)
            ref = simulate(model, grid)
            obs = add_noise(ref, noise, cfg.noise_seed) if noise > 0 else ref
            train, _ = split(obs, p)
            fitted = fit_trajectory(method, train, seed, noise, cfg.iterations, cfg.threshold, cfg.ridge,
                                    cfg.tv_weight)
            pred = fitted.predict(obs.states[0], grid)
            ref_v, pred_v = ref.states, pred.states
            times, ref_plot, pred_plot, labels = grid.times, ref_v, pred_v, ref.labels
        report = metrics.evaluate(pred_v, ref_v, n, meta)
        cell_dir.mkdir(parents=True, exist_ok=True)
        fitted.save(cell_dir / "model")
        _write_plot_csv(cell_dir / "plot.csv", times, ref_plot, pred_plot, labels)
        (cell_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2))
        return {**report.row(), "status": "ok"}
    except Exception as exc:  # recorded, grid continues
        log.error("cell %s failed: %s", rid, exc)
        cell_dir.mkdir(parents=True, exist_ok=True)
        (cell_dir / "error.txt").write_text(traceback.format_exc())
        return {**meta, "e_train": "", "e_full": "", "status": f"error:{type(exc).__name__}"}


def write_datasets(cfg: ExperimentConfig) -> list:
    """Clean and noised trajectory CSVs for every noise level in the grid."""
    model = default_model(cfg.model, cfg.variant)
    ref = simulate(model, cfg.time_grid())
    d = Path(cfg.out) / "data"
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in sorted(set([0.0, *cfg.noise])):
        traj = add_noise(ref, s, cfg.noise_seed) if s > 0 else ref
        path = d / f"{cfg.model}_noise{s:g}.csv"
        traj.to_csv(path)
        paths.append(path)
    return paths


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run every grid cell; rows are written in grid order so reruns are identical."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    write_datasets(cfg)
    cells = cfg.cells()
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_cell, [cfg] * len(cells), cells))
    else:
        rows = [_run_cell(cfg, c) for c in cells]
    path = out / "results.csv"
    if path.exists():
        path.unlink()
    for row in rows:
        metrics.append_result(path, row)
    return path


# ---------------------------------------------------------------------------
# tables


def _fmt(values) -> str:
    return f"{np.median(values):.2f}" if values else "-"


def table_report(results, methods=None, proportions=None) -> str:
    """Markdown table(s): rows are methods, (Train, Full) column pairs per proportion.

    One section per (model, noise) pair.  Cells with several seeds show the
    median; cells without a successful run show ``-``.
    """
    rows = metrics.read_results(results) if isinstance(results, (str, Path)) else list(results)
    sections = {}
    for r in rows:
        sections.setdefault((r["model"], float(r["noise"] or 0)), []).append(r)
    out = []
    for (model, noise), rs in sorted(sections.items()):
        meths = methods or list(dict.fromkeys(r["method"] for r in rs))
        props = proportions or sorted({float(r["proportion"]) for r in rs})
        head = ["Method"] + [f"p={p:.2f} {k}" for p in props for k in ("Train", "Full")]
        lines = [f"### {model}, noise {noise:g}", "",
                 "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for m in meths:
            cells = [m]
            for p in props:
                ok = [r for r in rs if r["method"] == m and abs(float(r["proportion"]) - p) < 1e-9
                      and r.get("status", "ok") == "ok"]
                cells.append(_fmt([float(r["e_train"]) for r in ok]))
                cells.append(_fmt([float(r["e_full"]) for r in ok]))
            lines.append("| " + " | ".join(cells) + " |")
        out.append("\n".join(lines))
    return "\n\n".join(out) + "\n"


def paper_grid(model: str, out: str, seeds=(0,), iterations=None) -> ExperimentConfig:
    """Full grid of the published comparison for one dataset."""
    return ExperimentConfig(model=model, proportions=[1 / 3, 1 / 2, 2 / 3], noise=[0.0, 0.01],
                            methods=["sindy", "node1", "node2", "kanode"], seeds=list(seeds), out=out,
                            iterations=iterations)
