"""Matrix Market ingestion of ``(A, B)`` and persistence of solver output.

``A`` is kept as a CSR matrix when it comes from a coordinate file and as a
dense ndarray otherwise; ``B`` is always dense. Only the ``general``
symmetry variant with real (or integer) fields is accepted.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .solver import FactoredIterate, SolveReport

__all__ = [
    "MatrixMarketError",
    "DimensionError",
    "StableSystem",
    "read_matrix",
    "read_system",
    "write_factors",
    "read_factors",
    "write_report",
    "REPORT_SCHEMA",
]

_MM_DIGITS = 17  # round-trip exact for float64
_INDEX_NAME = "index.json"


class MatrixMarketError(ValueError):
    """Raised for malformed or unsupported Matrix Market input."""


class DimensionError(ValueError):
    """Raised when matrix shapes are inconsistent."""


@dataclass(frozen=True)
class StableSystem:
    """Data of ``A P + P A^T = -B B^T``.

    ``A`` is an ``(n, n)`` ndarray or scipy sparse matrix, ``B`` a dense
    ``(n, p)`` array. ``stability_checked`` records whether the spectrum of
    ``A`` has been confirmed to lie in the open left half-plane.
    """

    A: object
    B: np.ndarray
    stability_checked: bool = False

    def __post_init__(self):
        A, B = self.A, np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionError(
                f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[1]}")
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]


def _check_header(path):
    with open(path, "r") as f:
        header = f.readline()
    tokens = header.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
        raise MatrixMarketError(f"{path}: not a Matrix Market matrix header: {header!r}")
    fmt, field, symmetry = tokens[2:]
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"{path}: unknown format {fmt!r}")
    if field not in ("real", "integer", "double"):
        raise MatrixMarketError(f"{path}: unsupported field {field!r} (real only)")
    if symmetry != "general":
        raise MatrixMarketError(f"{path}: unsupported symmetry {symmetry!r} (general only)")
    return fmt


def read_matrix(path):
    """Read a real ``general`` Matrix Market file.

    Coordinate files come back as CSR with duplicate entries summed, array
    files as a float64 ndarray.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    fmt = _check_header(path)
    try:
        M = scipy.io.mmread(str(path))
    except Exception as exc:  # scipy raises a mix of ValueError/RuntimeError
        raise MatrixMarketError(f"{path}: {exc}") from exc
    if fmt == "coordinate":
        return sp.csr_matrix(M, dtype=float)
    return np.asarray(M, dtype=float)


def read_system(path_A, path_B) -> StableSystem:
    """Load ``A`` (square) and ``B`` (matching row count) into a system.

    The returned system has ``stability_checked=False``.
    """
    A = read_matrix(path_A)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{path_A}: A must be square, got {A.shape}")
    B = read_matrix(path_B)
    if sp.issparse(B):
        B = B.toarray()
    return StableSystem(A, B)


def _write_dense(path, X):
    scipy.io.mmwrite(str(path), np.asarray(X, dtype=float),
                     precision=_MM_DIGITS, symmetry="general")


def _read_dense(path, n):
    X = read_matrix(path)
    if sp.issparse(X):
        X = X.toarray()
    if X.shape[0] != n:
        raise DimensionError(f"{path}: expected {n} rows, got {X.shape[0]}")
    return X


def write_factors(iterate: FactoredIterate, path) -> None:
    """Persist an iterate as a directory of dense arrays plus ``index.json``.

    The directory is assembled next to ``path`` and moved into place at the
    end, so a failure never leaves a partially written directory behind.
    """
    path = Path(path)
    for U, W, _ in iterate.blocks:
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(W))):
            raise ValueError("cannot persist non-finite factors")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        index = {"n": iterate.n, "blocks": [], "hom": None, "chain": None}
        for i, (U, W, s) in enumerate(iterate.blocks, start=1):
            _write_dense(tmp / f"U_{i:04d}.mtx", U)
            _write_dense(tmp / f"W_{i:04d}.mtx", W)
            index["blocks"].append({
                "U": f"U_{i:04d}.mtx", "W": f"W_{i:04d}.mtx",
                "sign": int(s), "width": int(U.shape[1]),
            })
        for key, part in (("hom", iterate.hom), ("chain", iterate.chain)):
            if part is None:
                continue
            U, W, s = part
            _write_dense(tmp / f"U_{key}.mtx", U)
            _write_dense(tmp / f"W_{key}.mtx", W)
            index[key] = {"U": f"U_{key}.mtx", "W": f"W_{key}.mtx",
                          "sign": int(s), "width": int(U.shape[1])}
        with open(tmp / _INDEX_NAME, "w") as f:
            json.dump(index, f, indent=2)

        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def read_factors(path) -> FactoredIterate:
    """Inverse of :func:`write_factors`."""
    path = Path(path)
    with open(path / _INDEX_NAME) as f:
        index = json.load(f)
    n = int(index["n"])

    def load(entry):
        return (_read_dense(path / entry["U"], n),
                _read_dense(path / entry["W"], n),
                int(entry["sign"]))

    blocks = tuple(load(e) for e in index["blocks"])
    hom = load(index["hom"]) if index.get("hom") else None
    chain = load(index["chain"]) if index.get("chain") else None
    return FactoredIterate(n=n, blocks=blocks, hom=hom, chain=chain)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["sigma", "iterations", "residual_history", "termination",
                 "observed_rate", "wall_time_seconds"],
    "properties": {
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "iterations": {"type": "integer", "minimum": 0},
        "residual_history": {"type": "array",
                             "items": {"type": ["number", "null"]}},
        "termination": {"enum": ["tol", "max_iters", "diverged"]},
        "observed_rate": {"type": ["number", "null"], "minimum": 0},
        "wall_time_seconds": {"type": "number", "minimum": 0},
        "rhs_norm": {"type": "number", "minimum": 0},
        "relative_residual": {"type": ["number", "null"]},
        "symmetry_correction": {"type": "number", "minimum": 0},
    },
}


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def write_report(report: SolveReport, path) -> None:
    """Write ``report`` as JSON (non-finite numbers become ``null``)."""
    doc = report.to_dict()
    doc["residual_history"] = [_json_float(r) for r in doc["residual_history"]]
    for key in ("observed_rate", "relative_residual"):
        if doc.get(key) is not None:
            doc[key] = _json_float(doc[key])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, allow_nan=False)
