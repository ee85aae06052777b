"""End-to-end experiments: data, training, posterior rollouts and metrics.

A run is fully determined by its :class:`ExperimentConfig` and writes

- ``data.csv`` (training + test observations) and ``reference.csv``
- ``model.json``
- ``predictions.csv`` and ``variance.csv``
- ``rmse_over_time.csv``
- ``metrics.json`` (bit-reproducible) and ``timing.json`` (wall clock)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynsys import (
    DEFAULT_X0,
    TimeGrid,
    Trajectory,
    add_noise,
    get_system,
    irregular_grid,
    load_csv,
    regular_grid,
    save_csv,
    simulate_reference,
)
from .gpcore import FactorizationError, TrainConfig, TrainedModel, TrainingError, load_model, save_model, train
from .integrate import (
    EnsembleError,
    PredictSpec,
    SolverFailure,
    ds_rollout_ensemble,
    init_window,
    mean_rollout,
)
from .mscoef import SchemeKind, SingularWindowError

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NumericFailure(RuntimeError):
    """A numerical stage (training, sampling, integration) failed."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


NUMERIC_ERRORS = (TrainingError, FactorizationError, EnsembleError, SolverFailure, SingularWindowError,
                  np.linalg.LinAlgError, FloatingPointError)

# per-system defaults applied to unset grid fields
SYSTEM_PRESETS = {
    "dho": {"h": 0.01, "b": 0.0, "n_steps": 1000, "train_steps": 500},
    "vdp": {"h": 0.1, "b": 0.5, "n_steps": 100, "train_steps": 50},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment description; ``None`` grid fields take system presets."""

    system: str = "dho"  # "dho" | "vdp" | "csv:PATH"
    h: float | None = None
    b: float | None = None
    n_steps: int | None = None
    train_steps: int | None = None
    t0: float = 0.0
    x0: tuple | None = None
    grid_seed: int | None = None
    noise_sigma: float = 0.01
    kind: str = "AB"
    order: int = 1
    taylor_mode: str = "independent"
    noise_variant: str = "full"
    optimizer: str = "lbfgs"
    iterations: int = 2000
    learning_rate: float = 0.05
    jitter: float = 1e-8
    restarts: int = 0
    gradient: str = "analytic"
    pretrain: bool = True
    predict_integrator: str = "rk45"
    predict_mode: str = "ds"
    n_samples: int = 256
    n_features: int = 256
    rtol: float = 1e-6
    atol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        try:
            SchemeKind.parse(self.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.order not in (1, 2, 3):
            raise ConfigError(f"order must be 1, 2 or 3, got {self.order}")
        if self.predict_mode not in ("ds", "mean"):
            raise ConfigError(f"predict_mode must be 'ds' or 'mean', got {self.predict_mode!r}")
        if self.predict_integrator not in ("rk45", "training"):
            raise ConfigError(f"predict_integrator must be 'rk45' or 'training', got {self.predict_integrator!r}")
        if self.noise_variant not in ("full", "diag", "iid"):
            raise ConfigError(f"unknown noise variant {self.noise_variant!r}")
        if self.taylor_mode not in ("independent", "adapted"):
            raise ConfigError(f"unknown Taylor mode {self.taylor_mode!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.n_samples < 1 or self.n_features < 1:
            raise ConfigError("n_samples and n_features must be positive")
        if self.jitter <= 0:
            raise ConfigError("jitter must be positive")
        if not (self.system in SYSTEM_PRESETS or self.system.startswith("csv:")):
            raise ConfigError(f"unknown system {self.system!r}")
        if self.system.startswith("csv:") and not Path(self.csv_path).is_file():
            raise ConfigError(f"data file {self.csv_path} does not exist")
        r = self.resolved_grid()
        if r["n_steps"] is not None and r["train_steps"] is not None and not 0 < r["train_steps"] < r["n_steps"]:
            raise ConfigError("train_steps must lie strictly between 0 and n_steps")
        if r["train_steps"] is not None and r["train_steps"] < init_window(self.kind, self.order):
            raise ConfigError(f"{self.label} needs at least {init_window(self.kind, self.order)} training steps")

    @property
    def csv_path(self) -> str:
        return self.system[4:]

    @property
    def scheme_kind(self) -> SchemeKind:
        return SchemeKind.parse(self.kind)

    @property
    def label(self) -> str:
        return f"{self.scheme_kind.value}{self.order}"

    def resolved_grid(self) -> dict:
        preset = SYSTEM_PRESETS.get(self.system, {})
        return {k: getattr(self, k) if getattr(self, k) is not None else preset.get(k)
                for k in ("h", "b", "n_steps", "train_steps")}

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            jitter=self.jitter,
            restarts=self.restarts,
            seed=self.seed,
            gradient=self.gradient,
            pretrain=self.pretrain,
            taylor_mode=self.taylor_mode,
        )

    def predict_spec(self) -> PredictSpec:
        return PredictSpec(self.predict_integrator, self.rtol, self.atol)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _base_type(annotation) -> type:
    """``int | None`` -> ``int``; plain types pass through."""
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    return args[0] if args else annotation


def _convert(name: str, raw: str, annotation) -> object:
    text = raw.strip()
    kind = _base_type(annotation)
    try:
        if kind is tuple:
            return tuple(float(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_config_text(text: str, **overrides) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` comments) into a config.

    Keys not belonging to :class:`ExperimentConfig` raise :class:`ConfigError`,
    except those listed in ``extra`` by :func:`split_config`.
    """
    values, _ = split_config(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return make_config(values)


SUITE_KEYS = ("cells", "seeds", "jobs")


def split_config(text: str) -> tuple[dict, dict]:
    """Split config text into experiment values and suite-level values."""
    known = {f.name: f for f in fields(ExperimentConfig)}
    hints = typing.get_type_hints(ExperimentConfig)
    values, extra = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in SUITE_KEYS:
            extra[key] = raw
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, hints[key])
    return values, extra


def make_config(values: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), **overrides)


# ---------------------------------------------------------------------------
# Metrics


def _check_pair(pred: Trajectory, ref: Trajectory) -> None:
    if pred.states.shape != ref.states.shape or not np.allclose(pred.times, ref.times, rtol=0, atol=1e-12):
        raise ValueError("prediction and reference grids or dimensions differ")


def mse(pred: Trajectory, ref: Trajectory) -> float:
    """Mean squared error over all time steps and dimensions."""
    _check_pair(pred, ref)
    return float(np.mean((pred.states - ref.states) ** 2))


def rmse_over_time(pred: Trajectory, ref: Trajectory) -> np.ndarray:
    """Root of the dimension-averaged squared error at each time step."""
    _check_pair(pred, ref)
    return np.sqrt(np.mean((pred.states - ref.states) ** 2, axis=1))


@dataclass
class MetricsReport:
    label: str
    mse: float
    mse_data: float
    rmse_over_time: np.ndarray
    n_failed: int
    n_samples: int
    seed: int
    config_hash: str
    data_hash: str
    wall_time: float = 0.0
    hypers: list = field(default_factory=list)

    def metrics_dict(self) -> dict:
        """Deterministic part of the report (no wall-clock values)."""
        return {
            "label": self.label,
            "mse": self.mse,
            "mse_data": self.mse_data,
            "final_rmse": float(self.rmse_over_time[-1]),
            "max_rmse": float(np.max(self.rmse_over_time)),
            "n_failed": self.n_failed,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "data_hash": self.data_hash,
            "hypers": self.hypers,
        }


# ---------------------------------------------------------------------------
# Pipeline stages


@dataclass(frozen=True)
class ExperimentData:
    """Observed trajectory, the clean reference it is scored against and the split."""

    observed: Trajectory
    reference: Trajectory
    n_train: int

    @property
    def train(self) -> Trajectory:
        return self.observed.head(self.n_train)


def make_data(config: ExperimentConfig) -> ExperimentData:
    g = config.resolved_grid()
    if config.system.startswith("csv:"):
        data = load_csv(config.csv_path, noisy=True)
        n_train = (g["train_steps"] or (len(data) - 1) // 2) + 1
        if n_train >= len(data):
            raise ConfigError("train split exceeds the data length")
        return ExperimentData(data, data, n_train)
    field_fn = get_system(config.system)
    grid_seed = config.seed if config.grid_seed is None else config.grid_seed
    if g["b"]:
        grid = irregular_grid(config.t0, g["n_steps"], g["h"], g["b"], grid_seed)
    else:
        grid = regular_grid(config.t0, g["n_steps"], g["h"])
    x0 = config.x0 if config.x0 is not None else DEFAULT_X0[config.system]
    reference = simulate_reference(field_fn, x0, grid)
    # noise stream is separated from sampling and training streams
    observed = add_noise(reference, config.noise_sigma, seed=[config.seed, 1]) if config.noise_sigma > 0 else reference
    return ExperimentData(observed, reference, g["train_steps"] + 1)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except NUMERIC_ERRORS as exc:
        raise NumericFailure(name, exc) from exc


def fit(config: ExperimentConfig, data: ExperimentData) -> TrainedModel:
    return _stage("train", train, data.train, config.scheme_kind, config.order, config.train_config(),
                  config.noise_variant)


@dataclass
class Prediction:
    mean: np.ndarray
    variance: np.ndarray
    n_failed: int
    n_samples: int


def predict(config: ExperimentConfig, model: TrainedModel, data: ExperimentData) -> Prediction:
    grid = data.observed.grid
    init = data.observed.states[: init_window(model.kind, model.order)]
    spec = config.predict_spec()
    if config.predict_mode == "mean":
        res = _stage("rollout", mean_rollout, model, grid, init, spec)
        if not res.ok:
            raise NumericFailure("rollout", SolverFailure(res.status))
        return Prediction(res.states, np.zeros_like(res.states), 0, 1)
    ens = _stage("rollout", ds_rollout_ensemble, model, config.n_samples, grid, init, spec,
                 seed=[config.seed, 2], n_features=config.n_features)
    return Prediction(ens.mean, ens.variance, ens.n_failed, ens.n_samples)


def score(config: ExperimentConfig, model: TrainedModel, data: ExperimentData, pred: Prediction) -> MetricsReport:
    traj = Trajectory(data.observed.grid, pred.mean)
    hypers = [
        {"hypers": [h.to_dict() for h in dm.hypers], "log_sigma": dm.log_sigma} for dm in model.dims
    ]
    return MetricsReport(
        label=config.label,
        mse=mse(traj, data.reference),
        mse_data=mse(traj, data.observed),
        rmse_over_time=rmse_over_time(traj, data.reference),
        n_failed=pred.n_failed,
        n_samples=pred.n_samples,
        seed=config.seed,
        config_hash=config.digest(),
        data_hash=model.data_hash,
        hypers=hypers,
    )


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_data(out: Path, data: ExperimentData) -> None:
    save_csv(data.observed, out / "data.csv")
    save_csv(data.reference, out / "reference.csv")
    (out / "split.txt").write_text(f"n_train = {data.n_train}\n")


def read_data(out: Path) -> ExperimentData:
    observed = load_csv(out / "data.csv", noisy=True)
    reference = load_csv(out / "reference.csv", noisy=False)
    n_train = int((out / "split.txt").read_text().split("=")[1])
    return ExperimentData(observed, reference, n_train)


def write_prediction(out: Path, grid: TimeGrid, pred: Prediction) -> None:
    save_csv(Trajectory(grid, pred.mean), out / "predictions.csv")
    save_csv(Trajectory(grid, pred.variance), out / "variance.csv")
    write_json(out / "ensemble.json", {"n_failed": pred.n_failed, "n_samples": pred.n_samples})


def read_prediction(out: Path) -> Prediction:
    mean = load_csv(out / "predictions.csv").states
    var = load_csv(out / "variance.csv").states
    info = json.loads((out / "ensemble.json").read_text())
    return Prediction(mean, var, info["n_failed"], info["n_samples"])


def write_report(out: Path, grid: TimeGrid, report: MetricsReport) -> None:
    with (out / "rmse_over_time.csv").open("w") as fh:
        fh.write("t,rmse\n")
        for t, r in zip(grid.times, report.rmse_over_time):
            fh.write(f"{t:.17g},{r:.17g}\n")
    write_json(out / "metrics.json", report.metrics_dict())
    write_json(out / "timing.json", {"wall_time": report.wall_time})


def run_experiment(config: ExperimentConfig, out=None) -> MetricsReport:
    """Simulate or load data, train, roll out and score one configuration."""
    start = time.perf_counter()
    data = make_data(config)
    model = fit(config, data)
    pred = predict(config, model, data)
    report = score(config, model, data, pred)
    report.wall_time = time.perf_counter() - start
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config.to_text())
        write_data(out, data)
        save_model(model, out / "model.json")
        write_prediction(out, data.observed.grid, pred)
        write_report(out, data.observed.grid, report)
    return report


# ---------------------------------------------------------------------------
# Suites


def parse_cells(text: str) -> list[tuple[str, int]]:
    """``"AB1, BDF3, Taylor2"`` -> [("AB", 1), ("BDF", 3), ("Taylor", 2)]."""
    cells = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if not tok[-1].isdigit():
            raise ConfigError(f"cell {tok!r} must end with the order")
        try:
            kind = SchemeKind.parse(tok[:-1])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cells.append((kind.value, int(tok[-1])))
    if not cells:
        raise ConfigError("no suite cells given")
    return cells


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"seeds: {exc}") from None


@dataclass
class SuiteCell:
    label: str
    mses: list
    failed: list  # seeds whose run failed

    @property
    def ok(self) -> bool:
        return not self.failed

    @property
    def mean(self) -> float:
        return float(np.mean(self.mses)) if self.mses else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.mses)) if self.mses else float("nan")


def _suite_job(args):
    config, out = args
    try:
        return run_experiment(config, out).mse, None
    except (NumericFailure, ConfigError) as exc:
        return None, str(exc)


def run_suite(base: ExperimentConfig, cells, seeds, out=None, jobs: int = 1) -> list[SuiteCell]:
    """Run every (cell, seed) pair; failed runs mark their cell instead of aborting."""
    tasks = []
    for kind, order in cells:
        for seed in seeds:
            cfg = dataclasses.replace(base, kind=kind, order=order, seed=seed)
            sub = None if out is None else Path(out) / f"{cfg.label}_seed{seed}"
            tasks.append((cfg, sub))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_suite_job, tasks))
    else:
        results = [_suite_job(t) for t in tasks]
    table = []
    for ci, (kind, order) in enumerate(cells):
        cell = SuiteCell(f"{SchemeKind.parse(kind).value}{order}", [], [])
        for si, seed in enumerate(seeds):
            value, err = results[ci * len(seeds) + si]
            if err is None:
                cell.mses.append(value)
            else:
                cell.failed.append(seed)
                log.warning("%s seed %d failed: %s", cell.label, seed, err)
        table.append(cell)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "table.csv").write_text(format_table_csv(table))
        (Path(out) / "table.txt").write_text(format_table(table))
    return table


def format_table(table: list[SuiteCell]) -> str:
    lines = ["method  MSE mean (std)"]
    for c in table:
        cell = f"{c.mean:.3f} ({c.std:.3f})" if c.ok else "failed"
        lines.append(f"{c.label:<8}{cell}")
    return "\n".join(lines) + "\n"


def format_table_csv(table: list[SuiteCell]) -> str:
    lines = ["method,mean,std,n_ok,failed_seeds"]
    for c in table:
        lines.append(f"{c.label},{c.mean:.17g},{c.std:.17g},{len(c.mses)},{' '.join(map(str, c.failed))}")
    return "\n".join(lines) + "\n"
