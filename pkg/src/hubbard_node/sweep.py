"""Grid orchestration over ``(U, V)`` and the command-line entry points.

Config files are plain ``key = value`` lines; ``#`` starts a comment.  List
values are comma separated, and ``start:stop:step`` expands to an inclusive
grid, e.g. ``U = 0:5:0.25``.  The output root can be overridden with the
``HUBBARD_NODE_OUTPUT`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .dataset import SplitSpec, TrajectoryIOError, read_arrays, read_trajectory, write_arrays
from .diagnostics import BUILDUP_THRESHOLD, RATIO_THRESHOLD, classify
from .evalmetrics import CURVE_COLUMNS, DEFAULT_GUARD, GUARD_TARGETS, REPORT_COLUMNS, evaluate_prediction, horizon_curves
from .model import ModelParams
from .propagator import EvolutionSpec
from .rdm import HOLE_ORDERINGS

ENV_OUTPUT = "HUBBARD_NODE_OUTPUT"
PREDICTION_SCHEMA = "hubbard-node/prediction"
EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
INDICATOR_COLUMNS = ("U", "V", "buildup", "e_corr_avg", "e_pot0", "ratio", "pearson_uu", "pearson_ud",
                     "strong_buildup", "strong_corr_energy")
PAPER_SCALE_HIDDEN = 2048


class ConfigError(ValueError):
    pass


def _default_u() -> list[float]:
    return [round(0.25 * k, 10) for k in range(21)]


def _default_v() -> list[float]:
    return [round(0.25 * k, 10) for k in range(1, 9)]


@dataclass
class SweepConfig:
    """Everything a sweep needs; times in units of ``1/J``."""

    U: list[float] = field(default_factory=_default_u)
    V: list[float] = field(default_factory=_default_v)
    n_sites: int = 6
    n_up: int = 3
    n_down: int = 3
    dt: float = 0.01
    t_end: float = 70.0
    T: float = 50.0
    t0_pearson: float = 10.0
    predict_from: float = 40.0
    train_steps: int = 3000
    val_steps: int = 1000
    horizons: list[float] = field(default_factory=lambda: [20.0, 25.0])
    buildup_threshold: float = BUILDUP_THRESHOLD
    ratio_threshold: float = RATIO_THRESHOLD
    seed: int = 0
    workers: int = 1
    output: str = "runs"
    variant: str = "default"
    # learning stage
    hidden: int = 512
    depth: int = 2
    activation: str = "tanh"
    lr: float = 1e-3
    lr_decay: float = 1.0
    window: int = 40
    stride: int = 5
    batch: int = 32
    epochs: int = 40
    updates_per_epoch: int = 25
    alpha_tr_D: float = 0.0
    alpha_tr_Q: float = 0.0
    alpha_psd_D: float = 0.0
    alpha_psd_Q: float = 0.0
    normalization: str = "global"
    guard: float = DEFAULT_GUARD
    guard_on: str = "physical"
    curve_every: float = 1.0
    hole_ordering: str = "psd"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dt <= 0 or self.t_end <= 0:
            raise ConfigError("dt and t_end must be positive")
        for name in ("t_end", "T", "t0_pearson", "predict_from"):
            steps = getattr(self, name) / self.dt
            if abs(steps - round(steps)) > 1e-6:
                raise ConfigError(f"{name} = {getattr(self, name)} is not on the dt grid")
        for h in self.horizons:
            if abs(h / self.dt - round(h / self.dt)) > 1e-6:
                raise ConfigError(f"horizon {h} is not on the dt grid")
        if self.T > self.t_end or self.t0_pearson >= self.T:
            raise ConfigError("need t0_pearson < T <= t_end")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.guard_on not in GUARD_TARGETS:
            raise ConfigError(f"guard_on must be one of {GUARD_TARGETS}")
        if self.train_steps < 1 or self.val_steps < 1:
            raise ConfigError("train_steps and val_steps must be positive")
        if self.hole_ordering not in HOLE_ORDERINGS:
            raise ConfigError(f"hole_ordering must be one of {HOLE_ORDERINGS}")
        if self.normalization not in ("global", "per-feature"):
            raise ConfigError("normalization must be 'global' or 'per-feature'")

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(float(u), float(v)) for v in self.V for u in self.U]

    def digest(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("workers", "output")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def root(self) -> Path:
        return Path(os.environ.get(ENV_OUTPUT) or self.output)

    def point_dir(self, U: float, V: float) -> Path:
        return self.root() / "points" / f"U{U:.4f}_V{V:.4f}"

    def model_dir(self, U: float, V: float) -> Path:
        return self.point_dir(U, V) / f"model-{self.variant}"

    def prediction_dir(self, U: float, V: float) -> Path:
        return self.point_dir(U, V) / f"prediction-{self.variant}"

    def evolution(self) -> EvolutionSpec:
        return EvolutionSpec(self.dt, self.t_end)

    def split(self) -> SplitSpec:
        return SplitSpec(self.train_steps, self.val_steps, self.dt)

    def train_config(self, U: float, V: float):
        from .node import TrainConfig

        names = {f.name for f in fields(TrainConfig)}
        kw = {k: v for k, v in asdict(self).items() if k in names and k != "seed"}
        return TrainConfig(seed=point_seed(self.seed, U, V), **kw)


def point_seed(master: int, U: float, V: float) -> int:
    """Seed for one grid point, independent of scheduling order."""
    h = hashlib.sha256(f"{int(master)}:{float(U)!r}:{float(V)!r}".encode()).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


def _parse_value(raw: str, kind) -> object:
    raw = raw.strip()
    if kind is list or (isinstance(kind, str) and kind.startswith("list")):
        values: list[float] = []
        for part in filter(None, (p.strip() for p in raw.split(","))):
            if ":" in part:
                a, b, s = (float(x) for x in part.split(":"))
                if s <= 0:
                    raise ConfigError(f"non-positive step in range {part!r}")
                n = int(math.floor((b - a) / s + 1e-9))
                values.extend(round(a + k * s, 10) for k in range(n + 1))
            else:
                values.append(float(part))
        return values
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def _field_kind(f) -> object:
    t = str(f.type)
    if t.startswith("list"):
        return "list"
    return {"int": int, "float": float, "str": str}.get(t, str)


def parse_config(text: str, base: SweepConfig | None = None) -> SweepConfig:
    """Parse ``key = value`` text into a :class:`SweepConfig`."""
    kinds = {f.name: _field_kind(f) for f in fields(SweepConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _parse_value(value, kinds[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    try:
        return replace(base or SweepConfig(), **updates)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def format_config(config: SweepConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- tasks


@dataclass
class TaskResult:
    U: float
    V: float
    ok: bool
    message: str = ""
    payload: dict = field(default_factory=dict)


def _simulate_task(config: SweepConfig, U: float, V: float) -> dict:
    from .pipeline import simulate_point

    params = ModelParams(U=U, V=V, n_sites=config.n_sites)
    res = simulate_point(params, config.evolution(), config.n_up, config.n_down, config.T,
                         config.t0_pearson, split=config.split(), buildup_threshold=config.buildup_threshold,
                         ratio_threshold=config.ratio_threshold)
    res.data.fit_normalizer(config.normalization)
    manifest = res.data.write(config.point_dir(U, V) / "data")
    return {"hashes": {k: v["sha256"] for k, v in manifest["arrays"].items()}}


def _train_task(config: SweepConfig, U: float, V: float) -> dict:
    from .node import train

    data = read_trajectory(config.point_dir(U, V) / "data")
    result = train(data, config.train_config(U, V), config.normalization)
    result.model.provenance["sweep_config_hash"] = config.digest()
    out = config.model_dir(U, V)
    result.model.save(out)
    result.write_history(out)
    if result.aborted:
        raise RuntimeError(f"training diverged ({result.aborted}); best checkpoint kept")
    return {"best_val_mse": result.best_val_mse, "seconds": result.seconds}


def _predict_task(config: SweepConfig, U: float, V: float) -> dict:
    from .node import NodeModel, predict

    data = read_trajectory(config.point_dir(U, V) / "data")
    model = NodeModel.load(config.model_dir(U, V))
    start = int(round(config.predict_from / data.dt))
    horizon = max([*config.horizons, data.t_end - config.predict_from])
    x0 = model.normalizer.apply(data.packed[start]) if model.normalizer else data.packed[start]
    pred = predict(model, x0, horizon, t0=config.predict_from)
    manifest = {"schema": PREDICTION_SCHEMA, "schema_version": 1, "U": U, "V": V,
                "t0": config.predict_from, "failed_at": pred.failed_at, "variant": config.variant}
    write_arrays(config.prediction_dir(U, V), manifest,
                 {"times": pred.times, "values": pred.values, "physical": pred.physical()})
    return {"failed_at": pred.failed_at, "steps": len(pred.times)}


def load_prediction(path) -> tuple[dict, dict]:
    return read_arrays(path, PREDICTION_SCHEMA, 1)


def _evaluate_task(config: SweepConfig, U: float, V: float) -> dict:
    data = read_trajectory(config.point_dir(U, V) / "data")
    manifest, arrays = load_prediction(config.prediction_dir(U, V))
    report = evaluate_prediction(data, arrays["times"], arrays["physical"], manifest["t0"],
                                 config.horizons, site=0, guard=config.guard,
                                 normalized_pred=arrays["values"], failed_at=manifest["failed_at"],
                                 guard_on=config.guard_on)
    curves = horizon_curves(data, arrays["times"], arrays["physical"], manifest["t0"],
                            config.curve_every, normalized_pred=arrays["values"])
    return {"rows": report.rows(), "curves": curves}


TASKS: dict[str, Callable[[SweepConfig, float, float], dict]] = {
    "simulate": _simulate_task,
    "train": _train_task,
    "predict": _predict_task,
    "evaluate": _evaluate_task,
}


def _run_task(job: tuple[str, SweepConfig, float, float]) -> TaskResult:
    """Run one task, turning any exception into a failed result (picklable for worker pools)."""
    name, config, U, V = job
    try:
        return TaskResult(U, V, True, payload=TASKS[name](config, U, V) or {})
    except Exception as exc:  # isolate per-point failures
        return TaskResult(U, V, False, f"{type(exc).__name__}: {exc}",
                          {"traceback": traceback.format_exc(limit=4)})


def run_tasks(name: str, config: SweepConfig, points: Sequence[tuple[float, float]] | None = None) -> list[TaskResult]:
    """Run one stage over the grid; results come back in grid order."""
    if name not in TASKS:
        raise KeyError(f"unknown task {name!r}")
    jobs = [(name, config, U, V) for U, V in (config.points if points is None else points)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_run_task, jobs))
    return [_run_task(job) for job in jobs]


# ---------------------------------------------------------------- tables


def _stamp(config: SweepConfig) -> dict:
    return {"config_hash": config.digest(), "version": __version__}


def write_table(path: Path, columns: Sequence[str], rows: list[dict], config: SweepConfig) -> Path:
    """CSV with provenance columns appended to every row."""
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(columns) + ["config_hash", "version"]
    stamp = _stamp(config)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({**{c: _fmt(row.get(c, "")) for c in columns}, **stamp})
    return path


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, float):
        return repr(value)
    return value


def read_table(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def indicator_rows(config: SweepConfig) -> tuple[list[dict], list[TaskResult]]:
    rows, missing = [], []
    for U, V in config.points:
        try:
            data = read_trajectory(config.point_dir(U, V) / "data")
        except TrajectoryIOError as exc:
            missing.append(TaskResult(U, V, False, f"missing dataset: {exc}"))
            continue
        ind = dict(data.indicators)
        strong_b, strong_r = classify(ind["buildup"], ind["ratio"], config.buildup_threshold,
                                      config.ratio_threshold)
        ind.update(U=U, V=V, strong_buildup=strong_b, strong_corr_energy=strong_r)
        rows.append(ind)
    return rows, missing


def _summarize(stage: str, config: SweepConfig, results: list[TaskResult]) -> int:
    failed = [r for r in results if not r.ok]
    summary = {"stage": stage, **_stamp(config), "points": len(results), "failed": len(failed),
               "failures": [{"U": r.U, "V": r.V, "message": r.message} for r in failed]}
    root = config.root()
    root.mkdir(parents=True, exist_ok=True)
    (root / f"summary-{stage}.json").write_text(json.dumps(summary, indent=2))
    print(f"{stage}: {len(results) - len(failed)}/{len(results)} points ok")
    for r in failed:
        print(f"  failed U={r.U} V={r.V}: {r.message}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_simulate(config: SweepConfig) -> int:
    return _summarize("simulate", config, run_tasks("simulate", config))


def cmd_diagnose(config: SweepConfig) -> int:
    rows, missing = indicator_rows(config)
    write_table(config.root() / "indicators.csv", INDICATOR_COLUMNS, rows, config)
    return _summarize("diagnose", config, [TaskResult(r["U"], r["V"], True) for r in rows] + missing)


def cmd_train(config: SweepConfig) -> int:
    return _summarize("train", config, run_tasks("train", config))


def cmd_predict(config: SweepConfig) -> int:
    return _summarize("predict", config, run_tasks("predict", config))


def cmd_evaluate(config: SweepConfig) -> int:
    results = run_tasks("evaluate", config)
    rows, curves = [], []
    for r in results:
        if r.ok:
            rows.extend(r.payload["rows"])
            curves.extend({"variant": config.variant, "U": r.U, "V": r.V, **c} for c in r.payload["curves"])
    root = config.root()
    write_table(root / f"reports-{config.variant}.csv", ("variant",) + REPORT_COLUMNS,
                [{"variant": config.variant, **row} for row in rows], config)
    write_table(root / f"curves-{config.variant}.csv", ("variant", "U", "V") + CURVE_COLUMNS, curves, config)
    return _summarize("evaluate", config, results)


def cmd_export_figures(config: SweepConfig) -> int:
    """Tidy per-figure tables from the indicator and report tables."""
    root = config.root()
    out = root / "figures"
    ind_rows = read_table(root / "indicators.csv") if (root / "indicators.csv").exists() else []
    for name, col in (("fig2a_buildup", "buildup"), ("fig2b_energy_ratio", "ratio"),
                      ("fig3a_pearson_upup", "pearson_uu"), ("fig3b_pearson_updown", "pearson_ud")):
        write_table(out / f"{name}.csv", ("U", "V", col), ind_rows, config)
    reports = []
    for path in sorted(root.glob("reports-*.csv")):
        reports.extend(read_table(path))
    write_table(out / "fig3cd_prediction_pearson.csv", ("variant", "U", "V", "horizon", "pearson_packed"),
                reports, config)
    write_table(out / "fig4_occupation_deviation.csv", ("variant", "U", "V", "horizon", "delta_n1", "delta_d1"),
                reports, config)
    curves = []
    for path in sorted(root.glob("curves-*.csv")):
        curves.extend(read_table(path))
    write_table(out / "fig5_prediction_length.csv", ("variant", "U", "V") + CURVE_COLUMNS, curves, config)
    print(f"figures: tables written to {out}")
    return EXIT_OK


def verify_dataset(path, tol: float = 1e-10, hole_ordering: str = "psd") -> dict[str, tuple[bool, float]]:
    """Invariant checks on a persisted trajectory: ``name -> (passed, worst value)``.

    With ``hole_ordering="literal"`` the hole matrix is negative semi-definite
    and its trace is ``-(M - N↑)(M - N↓)``; the checks are adjusted to match.
    """
    from . import rdm
    from .dataset import unpack

    data = read_trajectory(path)
    n_pairs = data.n_up * data.n_down
    rows = np.unique(np.linspace(0, len(data.packed) - 1, 50).astype(int))
    D12 = unpack(data.packed[rows])
    D1 = rdm.one_rdm_from_updown(D12, data.n_up, data.n_down)
    sign = 1.0 if hole_ordering == "psd" else -1.0
    Q = sign * rdm.two_hole_rdm(D12, D1, hole_ordering)
    checks = {}
    tr = np.abs(np.trace(D12, axis1=-2, axis2=-1).real - n_pairs).max()
    checks["trace_D12"] = (tr <= tol, float(tr))
    holes = (data.n_sites - data.n_up) * (data.n_sites - data.n_down)
    trq = np.abs(np.trace(Q, axis1=-2, axis2=-1).real - holes).max()
    checks["trace_Q"] = (trq <= tol, float(trq))
    for name, mats in (("psd_D12", D12), ("psd_Q", Q)):
        lam = float(np.linalg.eigvalsh(mats).min())
        checks[name] = (lam >= -tol, lam)
    occ = float(np.abs(data.occupations.sum(axis=1) - (data.n_up + data.n_down)).max())
    checks["occupation_sum"] = (occ <= 1e-9, occ)
    if "energy_first" in data.extra:
        e0, e1 = data.extra["energy_first"], data.extra["energy_last"]
        drift = abs(e1 - e0) / max(1.0, abs(e0))
        checks["energy_drift"] = (drift <= 1e-9, drift)
    if data.U == 0.0:
        worst = float(np.abs(data.norms).max())
        checks["slater_cumulants"] = (worst <= 1e-9, worst)
    return checks


def cmd_verify(config: SweepConfig, paths: Sequence[str] = ()) -> int:
    targets = [Path(p) for p in paths] or [config.point_dir(U, V) / "data" for U, V in config.points]
    results = []
    for path in targets:
        try:
            checks = verify_dataset(path, hole_ordering=config.hole_ordering)
        except TrajectoryIOError as exc:
            results.append(TaskResult(math.nan, math.nan, False, f"{path}: {exc}"))
            continue
        bad = [name for name, (ok, _) in checks.items() if not ok]
        for name, (ok, value) in checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {path} {name} {value:.3e}")
        results.append(TaskResult(math.nan, math.nan, not bad, f"{path}: failed {bad}" if bad else ""))
    return _summarize("verify", config, results)


# ---------------------------------------------------------------- CLI

COMMANDS = ("simulate", "diagnose", "train", "predict", "evaluate", "export-figures", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m hubbard_node", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="key = value config file")
        p.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("-o", "--output", help="output root (the environment variable still wins)")
        p.add_argument("-j", "--workers", type=int, help="parallel worker processes")
        if name in ("train", "predict", "evaluate"):
            p.add_argument("--paper-scale", action="store_true",
                           help=f"use hidden width {PAPER_SCALE_HIDDEN}")
        if name == "verify":
            p.add_argument("datasets", nargs="*", help="dataset directories (default: all grid points)")
    return parser


def load_config(args) -> SweepConfig:
    config = SweepConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        config = parse_config(text, config)
    if args.set:
        config = parse_config("\n".join(args.set), config)
    if args.output:
        config = replace(config, output=args.output)
    if args.workers:
        config = replace(config, workers=args.workers)
    if getattr(args, "paper_scale", False):
        config = replace(config, hidden=PAPER_SCALE_HIDDEN)
    return config


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "verify":
        return cmd_verify(config, args.datasets)
    handler = {
        "simulate": cmd_simulate, "diagnose": cmd_diagnose, "train": cmd_train,
        "predict": cmd_predict, "evaluate": cmd_evaluate, "export-figures": cmd_export_figures,
    }[args.command]
    return handler(config)
