"""Packed learning representation of the mixed-spin 2RDM and trajectory files.

Packed layout (width ``n + n(n-1)`` for an ``n x n`` Hermitian matrix, 1296
for ``n = 36``): the ``n`` real diagonal entries in index order, then for each
upper-triangle position ``p < q`` in row-major order the pair
``(Re A[p, q], Im A[p, q])``.

A trajectory directory holds ``manifest.json`` plus one raw little-endian
float64 file (C order, no header) per array.  The manifest records shape and
SHA-256 of every file; :func:`read_trajectory` refuses files whose size or
hash disagree.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA = "hubbard-node/trajectory"
SCHEMA_VERSION = 1
DTYPE = np.dtype("<f8")
HERMITIAN_TOL = 1e-9
MODES = ("global", "per-feature")


class DataError(ValueError):
    pass


class TrajectoryIOError(IOError):
    pass


@functools.lru_cache(maxsize=None)
def _layout(n: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(n, k=1)
    return rows, cols


def packed_width(n: int = 36) -> int:
    return n * n


def packing_descriptor(n: int = 36) -> dict:
    return {
        "matrix_dim": n,
        "width": packed_width(n),
        "layout": "diag-real then upper-triangle (re, im) row-major",
        "diag": [0, n],
        "offdiag": [n, n * n],
    }


def pack(A: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Pack Hermitian matrices ``(..., n, n)`` into ``(..., n*n)`` reals."""
    A = np.asarray(A)
    n = A.shape[-1]
    err = np.max(np.abs(A - np.conj(np.swapaxes(A, -1, -2)))) if A.size else 0.0
    if err > tol:
        raise DataError(f"matrix not Hermitian: max |A - A^†| = {err:.3e}")
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    rows, cols = _layout(n)
    upper = A[..., rows, cols]
    off = np.stack([upper.real, upper.imag], axis=-1).reshape(A.shape[:-2] + (-1,))
    diag = np.real(np.diagonal(A, axis1=-2, axis2=-1))
    return np.concatenate([diag, off], axis=-1)


def unpack(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack`."""
    x = np.asarray(x, dtype=float)
    n = int(round(np.sqrt(x.shape[-1])))
    if n * n != x.shape[-1]:
        raise DataError(f"packed width {x.shape[-1]} is not a square")
    rows, cols = _layout(n)
    A = np.zeros(x.shape[:-1] + (n, n), dtype=complex)
    idx = np.arange(n)
    A[..., idx, idx] = x[..., :n]
    off = x[..., n:].reshape(x.shape[:-1] + (-1, 2))
    vals = off[..., 0] + 1j * off[..., 1]
    A[..., rows, cols] = vals
    A[..., cols, rows] = np.conj(vals)
    return A


def real_mask(width: int) -> np.ndarray:
    """True for entries holding real parts (diagonal and Re off-diagonal)."""
    n = int(round(np.sqrt(width)))
    mask = np.ones(width, dtype=bool)
    mask[n + 1::2] = False
    return mask


@dataclass
class Normalizer:
    """Min-max scaling fitted on training rows.

    ``mode="global"`` keeps one ``(min, max)`` for all real parts and one for
    all imaginary parts; ``mode="per-feature"`` keeps one per column.
    """

    mode: str
    lo: np.ndarray
    hi: np.ndarray
    fitted_on: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, train: np.ndarray, mode: str = "global", fitted_on: dict | None = None) -> "Normalizer":
        train = np.asarray(train, dtype=float)
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if train.ndim != 2 or len(train) == 0:
            raise DataError("need a non-empty (rows, width) training block")
        width = train.shape[1]
        if mode == "per-feature":
            lo, hi = train.min(axis=0), train.max(axis=0)
            bad = np.flatnonzero(hi <= lo)
            if len(bad):
                raise DataError(f"degenerate feature range in columns {bad[:10].tolist()}"
                                f"{'...' if len(bad) > 10 else ''}")
        else:
            mask = real_mask(width)
            lo, hi = np.empty(width), np.empty(width)
            for part, sel in (("real", mask), ("imag", ~mask)):
                if not sel.any():
                    continue
                a, b = train[:, sel].min(), train[:, sel].max()
                if not b > a:
                    raise DataError(f"degenerate {part}-part pool: min = max = {a}")
                lo[sel], hi[sel] = a, b
        return cls(mode, lo, hi, dict(fitted_on or {}))

    @property
    def scale(self) -> np.ndarray:
        return self.hi - self.lo

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.lo) / self.scale

    def invert(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.scale + self.lo

    def to_json(self) -> dict:
        out = {"mode": self.mode, "fitted_on": self.fitted_on}
        if self.mode == "global":
            mask = real_mask(len(self.lo))
            out["real"] = [float(self.lo[mask][0]), float(self.hi[mask][0])]
            out["imag"] = [float(self.lo[~mask][0]), float(self.hi[~mask][0])]
        else:
            out["lo"] = self.lo.tolist()
            out["hi"] = self.hi.tolist()
        return out

    @classmethod
    def from_json(cls, d: dict, width: int = 1296) -> "Normalizer":
        if d["mode"] == "global":
            mask = real_mask(width)
            lo, hi = np.empty(width), np.empty(width)
            lo[mask], hi[mask] = d["real"]
            lo[~mask], hi[~mask] = d["imag"]
        else:
            lo, hi = np.array(d["lo"], dtype=float), np.array(d["hi"], dtype=float)
        return cls(d["mode"], lo, hi, d.get("fitted_on", {}))


@dataclass(frozen=True)
class SplitSpec:
    train_steps: int = 3000
    val_steps: int = 1000
    dt: float = 0.01

    def slices(self, n_rows: int) -> tuple[slice, slice, slice]:
        a, b = self.train_steps, self.train_steps + self.val_steps
        if n_rows < b:
            raise DataError(f"series has {n_rows} rows, split needs at least {b}")
        return slice(0, a), slice(a, b), slice(b, n_rows)

    def boundaries(self) -> tuple[float, float]:
        """Times at which validation and test data start."""
        return self.train_steps * self.dt, (self.train_steps + self.val_steps) * self.dt

    def to_json(self) -> dict:
        return {"train_steps": self.train_steps, "val_steps": self.val_steps, "dt": self.dt}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_arrays(path, manifest: dict, arrays: dict[str, np.ndarray]) -> dict:
    """Write ``arrays`` as raw float64 files plus ``manifest.json`` into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=DTYPE))
        fname = f"{name}.f64"
        tmp = path / (fname + ".tmp")
        arr.tofile(tmp)
        os.replace(tmp, path / fname)
        entries[name] = {"file": fname, "shape": list(arr.shape), "dtype": DTYPE.str,
                         "sha256": _sha256(path / fname)}
    manifest = dict(manifest)
    manifest["arrays"] = entries
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path / "manifest.json")
    return manifest


def read_arrays(path, schema: str | None = SCHEMA, version: int = SCHEMA_VERSION) -> tuple[dict, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise TrajectoryIOError(f"cannot read manifest in {path}: {exc}") from exc
    if schema is not None and (manifest.get("schema") != schema or manifest.get("schema_version") != version):
        raise TrajectoryIOError(
            f"schema mismatch: got {manifest.get('schema')} v{manifest.get('schema_version')}, "
            f"expected {schema} v{version}")
    arrays = {}
    for name, entry in manifest.get("arrays", {}).items():
        fpath = path / entry["file"]
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * DTYPE.itemsize
        if not fpath.exists() or fpath.stat().st_size != expected:
            raise TrajectoryIOError(f"{fpath} missing or wrong size (expected {expected} bytes)")
        if _sha256(fpath) != entry["sha256"]:
            raise TrajectoryIOError(f"hash mismatch for {fpath}")
        arrays[name] = np.fromfile(fpath, dtype=DTYPE).reshape(entry["shape"])
    return manifest, arrays


@dataclass
class TrajectoryData:
    """Everything persisted for one ``(U, V)`` quench."""

    U: float
    V: float
    dt: float
    times: np.ndarray
    packed: np.ndarray
    norms: np.ndarray
    correlation_energy: np.ndarray
    occupations: np.ndarray
    doublons: np.ndarray
    indicators: dict = field(default_factory=dict)
    n_sites: int = 6
    n_up: int = 3
    n_down: int = 3
    J: float = 1.0
    split: SplitSpec = field(default_factory=SplitSpec)
    normalizer: Normalizer | None = None
    extra: dict = field(default_factory=dict)

    ARRAYS = ("times", "packed", "norms", "correlation_energy", "occupations", "doublons")

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def fit_normalizer(self, mode: str = "global") -> Normalizer:
        train, _, _ = self.split.slices(len(self.packed))
        self.normalizer = Normalizer.fit(self.packed[train], mode,
                                         {"rows": [0, train.stop], "split": self.split.to_json()})
        return self.normalizer

    def manifest(self) -> dict:
        from .cumulants import NORM_COLUMNS

        return {
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "n_sites": self.n_sites, "n_up": self.n_up, "n_down": self.n_down,
            "J": self.J, "U": self.U, "V": self.V, "dt": self.dt, "t_end": self.t_end,
            "packing": packing_descriptor(int(round(np.sqrt(self.packed.shape[-1])))),
            "norm_columns": list(NORM_COLUMNS),
            "normalization": self.normalizer.to_json() if self.normalizer else None,
            "split": self.split.to_json(),
            "indicator_columns": list(self.indicators),
            "extra": self.extra,
        }

    def write(self, path) -> dict:
        arrays = {name: getattr(self, name) for name in self.ARRAYS}
        if self.indicators:
            arrays["indicators"] = np.array([[float(v) for v in self.indicators.values()]])
        return write_arrays(path, self.manifest(), arrays)

    @classmethod
    def read(cls, path) -> "TrajectoryData":
        manifest, arrays = read_arrays(path)
        indicators = {}
        if "indicators" in arrays:
            indicators = dict(zip(manifest["indicator_columns"], arrays["indicators"][0].tolist()))
        split = SplitSpec(**manifest["split"])
        norm = manifest.get("normalization")
        width = manifest["packing"]["width"]
        return cls(
            U=manifest["U"], V=manifest["V"], dt=manifest["dt"],
            **{name: arrays[name] for name in cls.ARRAYS},
            indicators=indicators, n_sites=manifest["n_sites"], n_up=manifest["n_up"],
            n_down=manifest["n_down"], J=manifest["J"], split=split,
            normalizer=Normalizer.from_json(norm, width) if norm else None,
            extra=manifest.get("extra", {}),
        )


def write_trajectory(path, data: TrajectoryData) -> dict:
    return data.write(path)


def read_trajectory(path) -> TrajectoryData:
    return TrajectoryData.read(path)
