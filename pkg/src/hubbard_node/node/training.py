"""Training loop, prediction and model persistence for the neural ODE."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..dataset import Normalizer, TrajectoryData, read_arrays, write_arrays
from .field import NonFiniteError, VectorField
from .losses import TERMS, LossWeights, PhysicalMap, total_loss
from .solver import IntegrationError, SolverConfig, integrate, rk4

MODEL_SCHEMA = "hubbard-node/model"
MODEL_SCHEMA_VERSION = 1
HISTORY_COLUMNS = ("step", "total") + TERMS
VAL_COLUMNS = ("epoch", "step") + tuple(f"val_{t}" for t in TERMS)
DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``window`` is the number of states per training segment (the first one is
    the initial condition); consecutive states are ``stride`` data rows
    apart, so a window spans ``(window - 1) * stride * dt``.  ``alpha_*``
    weight the constraint terms; 0 disables a term.  ``seed`` fixes
    parameter initialisation and window sampling.
    """

    hidden: int = 512
    depth: int = 2
    activation: str = "tanh"
    lr: float = 1e-3
    lr_decay: float = 1.0
    weight_decay: float = 0.0
    window: int = 40
    stride: int = 5
    batch: int = 32
    epochs: int = 40
    updates_per_epoch: int = 25
    seed: int = 0
    alpha_tr_D: float = 0.0
    alpha_tr_Q: float = 0.0
    alpha_psd_D: float = 0.0
    alpha_psd_Q: float = 0.0
    grad_clip: float = 1.0
    dtype: str = "float32"
    threads: int | None = 1
    track_constraints: bool = False
    max_seconds: float | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must hold at least two states")
        if self.batch < 1 or self.epochs < 0 or self.updates_per_epoch < 1 or self.stride < 1:
            raise ValueError("batch, epochs, updates_per_epoch and stride must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {tuple(DTYPES)}")
        self.weights()  # validates the alphas

    def weights(self) -> LossWeights:
        return LossWeights(psd_D=self.alpha_psd_D, psd_Q=self.alpha_psd_Q,
                           tr_D=self.alpha_tr_D, tr_Q=self.alpha_tr_Q)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def digest(self) -> str:
        return _digest(json.dumps(self.to_json(), sort_keys=True).encode())


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def array_digest(arr: np.ndarray) -> str:
    return _digest(np.ascontiguousarray(arr, dtype="<f8").tobytes())


@dataclass
class NodeModel:
    """A trained vector field together with everything needed to apply it."""

    field: VectorField
    solver: SolverConfig = SolverConfig()
    normalizer: Normalizer | None = None
    dt: float = 0.01
    n_sites: int = 6
    n_up: int = 3
    n_down: int = 3
    provenance: dict = field(default_factory=dict)

    def integrate(self, x0, t_grid, solver: SolverConfig | None = None) -> torch.Tensor:
        return integrate(self.field.checked, x0, t_grid, solver or self.solver)

    def save(self, path) -> dict:
        path = Path(path)
        manifest = {
            "schema": MODEL_SCHEMA,
            "schema_version": MODEL_SCHEMA_VERSION,
            "widths": self.field.widths,
            "activation": self.field.activation,
            "solver": self.solver.to_json(),
            "normalization": self.normalizer.to_json() if self.normalizer else None,
            "dt": self.dt,
            "n_sites": self.n_sites, "n_up": self.n_up, "n_down": self.n_down,
            "provenance": self.provenance,
        }
        return write_arrays(path, manifest, self.field.state_arrays())

    @classmethod
    def load(cls, path) -> "NodeModel":
        manifest, arrays = read_arrays(path, MODEL_SCHEMA, MODEL_SCHEMA_VERSION)
        widths = manifest["widths"]
        net = VectorField(widths[0], widths[1:-1], manifest["activation"])
        dtype = manifest["provenance"].get("config", {}).get("dtype", "float32")
        net = net.to(DTYPES.get(dtype, torch.float32))
        net.load_arrays(arrays)
        norm = manifest.get("normalization")
        return cls(
            field=net, solver=SolverConfig(**manifest["solver"]),
            normalizer=Normalizer.from_json(norm, widths[0]) if norm else None,
            dt=manifest["dt"], n_sites=manifest["n_sites"], n_up=manifest["n_up"],
            n_down=manifest["n_down"], provenance=manifest["provenance"],
        )


@dataclass
class TrainResult:
    model: NodeModel
    history: list[dict]
    validation: list[dict]
    aborted: str | None = None
    seconds: float = 0.0

    @property
    def best_val_mse(self) -> float:
        vals = [row["val_mse"] for row in self.validation if math.isfinite(row["val_mse"])]
        return min(vals) if vals else math.inf

    def write_history(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        _write_csv(path / "loss_history.csv", HISTORY_COLUMNS, self.history)
        _write_csv(path / "validation_history.csv", VAL_COLUMNS, self.validation)


def _write_csv(path: Path, columns: Sequence[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


class _Threads:
    def __init__(self, n: int | None):
        self.n = n

    def __enter__(self):
        self.prev = torch.get_num_threads()
        if self.n:
            torch.set_num_threads(self.n)

    def __exit__(self, *exc):
        torch.set_num_threads(self.prev)


def fit(train_rows: np.ndarray, val_rows: np.ndarray | None, dt: float, config: TrainConfig,
        normalizer: Normalizer | None = None, n_sites: int = 6, n_up: int = 3, n_down: int = 3,
        provenance: dict | None = None) -> TrainResult:
    """Train a vector field on (already normalized) contiguous rows.

    Windows of ``config.window`` consecutive rows are drawn uniformly from
    ``train_rows``; each is integrated with fixed-step RK4 at ``dt`` from its
    first row and the loss is backpropagated through the unrolled steps.
    After every epoch the model is rolled out over ``val_rows`` from its
    first row; the parameters with the lowest validation MSE are kept.
    """
    train_rows = np.asarray(train_rows, dtype=float)
    n_rows, width = train_rows.shape
    span = (config.window - 1) * config.stride + 1
    if n_rows < span:
        raise ValueError(f"need at least {span} training rows, got {n_rows}")
    dtype = DTYPES[config.dtype]
    started = time.perf_counter()
    with _Threads(config.threads):
        torch.manual_seed(config.seed)
        rng = np.random.default_rng(config.seed)
        net = VectorField(width, (config.hidden,) * config.depth, config.activation).to(dtype)
        opt = torch.optim.Adam(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
        sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.lr_decay)
        weights = config.weights()
        constrained = width == n_sites ** 4
        phys = PhysicalMap(normalizer, n_sites, n_up, n_down, dtype) if constrained else None
        val_report = TERMS[1:] if constrained else ()
        report = val_report if config.track_constraints else ()
        if weights.active() and phys is None:
            raise ValueError("constraint weights need 2RDM-shaped data")
        data = torch.as_tensor(train_rows, dtype=dtype)
        val = torch.as_tensor(np.asarray(val_rows, dtype=float), dtype=dtype) if val_rows is not None else None
        step_dt = dt * config.stride
        t_win = np.arange(config.window) * step_dt
        offsets = torch.arange(config.window) * config.stride

        history: list[dict] = []
        validation: list[dict] = []
        best_state = copy.deepcopy(net.state_dict())
        best_val = math.inf
        aborted = None

        def validate(epoch: int, step: int) -> None:
            nonlocal best_val, best_state
            if val is None:
                row = {"epoch": epoch, "step": step, "val_mse": math.nan}
            else:
                row = {"epoch": epoch, "step": step,
                       **_rollout_losses(net, val[::config.stride], step_dt, phys, val_report)}
            validation.append(row)
            score = row["val_mse"] if val is not None else (history[-1]["mse"] if history else math.inf)
            if math.isfinite(score) and score < best_val:
                best_val = score
                best_state = copy.deepcopy(net.state_dict())

        validate(0, 0)
        step = 0
        for epoch in range(1, config.epochs + 1):
            for _ in range(config.updates_per_epoch):
                starts = torch.as_tensor(rng.integers(0, n_rows - span + 1, size=config.batch))
                target = data[starts[None, :] + offsets[:, None]]  # (S, B, width)
                try:
                    pred = rk4(net.checked, target[0], t_win)
                    loss, parts = total_loss(pred, target, weights, phys, report)
                    if not torch.isfinite(loss):
                        raise NonFiniteError("non-finite loss")
                except (IntegrationError, NonFiniteError, torch.linalg.LinAlgError) as exc:
                    aborted = f"epoch {epoch} step {step}: {exc}"
                    break
                opt.zero_grad()
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
                opt.step()
                step += 1
                history.append({"step": step, "total": float(loss.detach()),
                                **{k: float(v.detach()) for k, v in parts.items()}})
            if aborted:
                break
            sched.step()
            validate(epoch, step)
            if config.max_seconds is not None and time.perf_counter() - started > config.max_seconds:
                break
        net.load_state_dict(best_state)

    prov = {
        "config": config.to_json(),
        "config_hash": config.digest(),
        "data_hash": array_digest(train_rows),
        "best_val_mse": best_val,
        "steps": step,
        "final": history[-1] if history else {},
        "aborted": aborted,
        "torch": torch.__version__,
    }
    prov.update(provenance or {})
    model = NodeModel(net, SolverConfig(), normalizer, dt, n_sites, n_up, n_down, prov)
    return TrainResult(model, history, validation, aborted, time.perf_counter() - started)


@torch.no_grad()
def _rollout_losses(net: VectorField, rows: torch.Tensor, dt: float, phys: PhysicalMap | None,
                    report: tuple[str, ...]) -> dict:
    t = np.arange(len(rows)) * dt
    try:
        pred = rk4(net.checked, rows[0], t)
    except (IntegrationError, NonFiniteError):
        return {"val_mse": math.inf}
    _, parts = total_loss(pred, rows, LossWeights(), phys, report)
    return {f"val_{k}": float(v) for k, v in parts.items()}


def train(data: TrajectoryData, config: TrainConfig = TrainConfig(),
          normalization: str = "global") -> TrainResult:
    """Fit a model on the training split of ``data`` (normalizer fitted on train only)."""
    train_sl, val_sl, _ = data.split.slices(len(data.packed))
    norm = data.normalizer if data.normalizer is not None and data.normalizer.mode == normalization \
        else data.fit_normalizer(normalization)
    rows = norm.apply(data.packed)
    return fit(rows[train_sl], rows[val_sl], data.dt, config, norm, data.n_sites, data.n_up, data.n_down,
               provenance={"U": data.U, "V": data.V, "dataset_hash": array_digest(data.packed)})


@dataclass
class Prediction:
    """Integrated trajectory from ``t0``; ``times`` are prediction times ``t - t0``."""

    t0: float
    times: np.ndarray
    values: np.ndarray
    failed_at: float | None = None
    normalizer: Normalizer | None = None

    def physical(self) -> np.ndarray:
        return self.values if self.normalizer is None else self.normalizer.invert(self.values)


def predict(model: NodeModel, x0: np.ndarray, horizon: float, t0: float = 0.0,
            solver: SolverConfig | None = None, denormalize: bool = False) -> Prediction:
    """Integrate from the normalized state ``x0`` over ``[0, horizon]`` on the model's grid.

    Integration runs in float64.  On failure the states reached so far are
    returned and ``failed_at`` holds the prediction time where it stopped.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    n = int(round(horizon / model.dt))
    t = np.arange(n + 1) * model.dt
    net = copy.deepcopy(model.field).double()
    x = torch.as_tensor(np.asarray(x0, dtype=float), dtype=torch.float64)
    failed = None
    with torch.no_grad():
        try:
            states = integrate(net.checked, x, t, solver or model.solver).numpy()
        except (IntegrationError, NonFiniteError) as exc:
            partial = getattr(exc, "states", None)
            states = partial.numpy() if partial is not None else x.numpy()[None]
            failed = float(getattr(exc, "t_reached", t[len(states) - 1]))
    values = states[: len(t)]
    pred = Prediction(t0, t[: len(values)], values, failed, model.normalizer)
    if denormalize:
        pred = replace(pred, values=pred.physical(), normalizer=None)
    return pred


@dataclass
class SearchResult:
    trials: list[dict]
    best: TrainResult
    best_config: TrainConfig


DEFAULT_SPACE = {
    "lr": (3e-4, 1e-3, 3e-3),
    "window": (20, 40),
    "stride": (2, 5, 10),
    "activation": ("tanh", "softplus"),
    "lr_decay": (1.0, 0.95),
}


def hyperparameter_search(data: TrajectoryData, base: TrainConfig = TrainConfig(), n_trials: int = 8,
                          seed: int = 0, space: dict | None = None) -> SearchResult:
    """Random search; trials are ranked by best validation-rollout MSE."""
    space = dict(DEFAULT_SPACE if space is None else space)
    rng = np.random.default_rng(seed)
    trials, best, best_cfg = [], None, None
    for k in range(n_trials):
        choice = {name: values[int(rng.integers(len(values)))] for name, values in space.items()}
        cfg = replace(base, seed=int(rng.integers(2 ** 31)), **choice)
        result = train(data, cfg)
        trials.append({"trial": k, **choice, "seed": cfg.seed, "val_mse": result.best_val_mse,
                       "seconds": result.seconds, "aborted": result.aborted})
        if best is None or result.best_val_mse < best.best_val_mse:
            best, best_cfg = result, cfg
    return SearchResult(trials, best, best_cfg)
