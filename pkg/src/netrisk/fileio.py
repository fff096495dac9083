"""Deterministic CSV/JSON writers and matching readers.

CSV outputs start with a ``#`` comment line carrying the tool version, seed
and config hash; JSON outputs carry the same data under ``"_meta"``. Floats
are written with 17 significant digits so files round-trip bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from . import __version__

FLOAT_FMT = "%.17g"


def config_hash(config: Any) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_line(seed: int | None, chash: str) -> str:
    return f"# netrisk {__version__} seed={'none' if seed is None else seed} config={chash}"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj: dict, *, seed: int | None = None, chash: str = "") -> Path:
    path = Path(path)
    payload = {"_meta": {"tool": f"netrisk {__version__}", "seed": seed, "config": chash}}
    payload.update(_jsonable(obj))
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def read_json(path) -> dict:
    data = json.loads(Path(path).read_text())
    data.pop("_meta", None)
    return data


def write_frame(path, df: pd.DataFrame, *, seed: int | None = None, chash: str = "") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(header_line(seed, chash) + "\n")
        df.to_csv(fh, index=False, float_format=FLOAT_FMT, lineterminator="\n")
    return path


def write_matrix(
    path, M, labels: Sequence[str], *, seed: int | None = None, chash: str = ""
) -> Path:
    """Dense row-major matrix with a header row of column labels."""
    df = pd.DataFrame(np.asarray(M, dtype=float), columns=[str(x) for x in labels])
    return write_frame(path, df, seed=seed, chash=chash)


def read_frame(path, **kw) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", **kw)


def read_matrix(path) -> tuple[np.ndarray, list[str]]:
    df = pd.read_csv(path, comment="#")
    labels = [str(c) for c in df.columns]
    M = df.to_numpy(dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{path}: matrix is {M.shape}, expected square")
    return M, labels


def long_panel(matrix, units: Iterable, times: Iterable, value: str = "value") -> pd.DataFrame:
    """Flatten a units x times matrix into (unit, time, value) rows."""
    matrix = np.asarray(matrix)
    units, times = list(units), list(times)
    return pd.DataFrame(
        {
            "unit": np.repeat(units, len(times)),
            "time": np.tile(times, len(units)),
            value: matrix.ravel(),
        }
    )
