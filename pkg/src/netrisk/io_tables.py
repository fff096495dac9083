"""Make/use ingestion, propagation matrices, Leontief inverses and network statistics.

The direct-requirement construction works in dollar flows:

* market shares ``OUT[i->j] / OUT[j]``, rescaled by the commodity producer's
  non-scrap ratio ``(y - scrap) / y``;
* input requirements ``IN[i->j] / y[j]``;
* ``W = MKTSHARE @ INPUTREQ`` so that ``W[i, j]`` is j's purchases from i per
  dollar of j's output.

The downstream matrix is ``W.T`` and the upstream matrix rescales ``W`` by
``y[j] / y[i]``, giving ``sales[i->j] / sales[i]``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    NegativeEntry,
    NonConvergence,
    ShapeMismatch,
    UnstableNetwork,
    ValidationError,
    ZeroTotal,
)

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class MakeUseTables:
    """Dollar-valued make and use tables for ``n`` industries/commodities.

    ``make[i, j]`` is commodity j produced by industry i; ``use[i, j]`` is
    commodity i consumed by industry j. Commodity k is the primary product of
    industry k, so both tables are square with a shared label order.
    """

    make: np.ndarray
    use: np.ndarray
    output: np.ndarray
    scrap: np.ndarray
    labels: tuple[str, ...]
    costs: np.ndarray | None = None
    period: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        make = np.asarray(self.make, dtype=float)
        use = np.asarray(self.use, dtype=float)
        output = np.asarray(self.output, dtype=float).ravel()
        scrap = np.asarray(self.scrap, dtype=float).ravel()
        n = len(self.labels)
        if make.shape != (n, n) or use.shape != (n, n):
            raise ShapeMismatch(
                f"make {make.shape} and use {use.shape} must both be {n}x{n}"
            )
        if output.shape != (n,) or scrap.shape != (n,):
            raise ShapeMismatch("output and scrap must have one entry per industry")
        for name, arr in (("make", make), ("use", use), ("output", output), ("scrap", scrap)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")
            if np.any(arr < 0):
                raise NegativeEntry(f"{name} has negative entries")
        if np.any(scrap > output):
            raise ValidationError("scrap exceeds output for some industry")
        object.__setattr__(self, "make", make)
        object.__setattr__(self, "use", use)
        object.__setattr__(self, "output", output)
        object.__setattr__(self, "scrap", scrap)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if self.costs is not None:
            costs = np.asarray(self.costs, dtype=float).ravel()
            if costs.shape != (n,) or np.any(costs <= 0):
                raise ValidationError("costs must be positive with one entry per industry")
            object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class IoNetwork:
    """Upstream and downstream propagation matrices for one period."""

    w_up: np.ndarray
    w_down: np.ndarray
    labels: tuple[str, ...] = ()
    period: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        w_up = np.asarray(self.w_up, dtype=float)
        w_down = np.asarray(self.w_down, dtype=float)
        if w_up.ndim != 2 or w_up.shape[0] != w_up.shape[1] or w_up.shape != w_down.shape:
            raise ShapeMismatch(f"w_up {w_up.shape} and w_down {w_down.shape} must be equal square matrices")
        for name, w in (("w_up", w_up), ("w_down", w_down)):
            if not np.all(np.isfinite(w)):
                raise ValidationError(f"{name} has non-finite entries")
            if np.any(w < 0):
                raise NegativeEntry(f"{name} has negative entries")
        labels = tuple(str(x) for x in self.labels) or tuple(str(i) for i in range(w_up.shape[0]))
        if len(labels) != w_up.shape[0]:
            raise ShapeMismatch("one label per unit required")
        object.__setattr__(self, "w_up", w_up)
        object.__setattr__(self, "w_down", w_down)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.w_up.shape[0]

    def matrix(self, direction: str) -> np.ndarray:
        return self.w_up if _direction(direction) == "up" else self.w_down


@dataclass(frozen=True)
class LeontiefPair:
    h_up: np.ndarray
    h_down: np.ndarray
    labels: tuple[str, ...] = ()
    radius_up: float = float("nan")
    radius_down: float = float("nan")

    def matrix(self, direction: str) -> np.ndarray:
        return self.h_up if _direction(direction) == "up" else self.h_down


@dataclass
class NetworkStats:
    labels: tuple[str, ...]
    in_degree: dict[str, np.ndarray]
    out_degree: dict[str, np.ndarray]
    centrality: dict[str, np.ndarray]
    spectral_radius: dict[str, float]
    cross_correlation: float

    def as_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "in_degree": {k: v.tolist() for k, v in self.in_degree.items()},
            "out_degree": {k: v.tolist() for k, v in self.out_degree.items()},
            "centrality": {k: v.tolist() for k, v in self.centrality.items()},
            "spectral_radius": dict(self.spectral_radius),
            "cross_correlation": self.cross_correlation,
        }


def _direction(direction: str) -> str:
    d = str(direction).lower()
    if d in ("up", "u", "upstream"):
        return "up"
    if d in ("down", "d", "downstream"):
        return "down"
    raise ValidationError(f"unknown direction {direction!r}")


def build_propagation_matrices(
    tables: MakeUseTables, *, cost_normalize: bool = False
) -> IoNetwork:
    """Construct ``IoNetwork`` from make/use tables.

    With ``cost_normalize`` the downstream rows are rescaled from output
    shares to cost shares using ``tables.costs`` (``sales[j->i] / costs[i]``).
    When no costs are supplied, costs equal output and the flag is a no-op.
    """
    y = tables.output
    if np.any(y <= 0):
        bad = [tables.labels[i] for i in np.flatnonzero(y <= 0)]
        raise ZeroTotal(f"zero total output for {bad}")
    out_j = tables.make.sum(axis=0)
    if np.any(out_j <= 0):
        bad = [tables.labels[j] for j in np.flatnonzero(out_j <= 0)]
        raise ZeroTotal(f"zero commodity production for {bad}")
    theta = (y - tables.scrap) / y
    if np.any(theta <= 0):
        raise ZeroTotal("non-scrap output is zero for some industry")

    mktshare = tables.make / out_j[None, :] / theta[None, :]
    inputreq = tables.use / y[None, :]
    W = mktshare @ inputreq

    w_down = W.T.copy()
    if cost_normalize and tables.costs is not None:
        w_down = w_down * (y / tables.costs)[:, None]
    w_up = W * (y[None, :] / y[:, None])
    meta = dict(tables.metadata)
    meta.update({"non_scrap_ratio": theta.tolist(), "cost_normalized": bool(cost_normalize)})
    return IoNetwork(w_up=w_up, w_down=w_down, labels=tables.labels, period=tables.period, metadata=meta)


def spectral_radius(
    W, *, max_iter: int = 10_000, tol: float = 1e-12
) -> float:
    """Spectral radius of ``|W|`` by shifted power iteration.

    Uses Collatz-Wielandt bounds on ``|W| + I`` as the stopping rule and
    falls back to a dense eigenvalue solve when the bracket fails to close
    (defective or reducible matrices converge slowly).
    """
    A = np.abs(np.asarray(W, dtype=float))
    n = A.shape[0]
    if n == 0 or not A.any():
        return 0.0
    B = A + np.eye(n)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        Bx = B @ x
        pos = x > 0
        lo = np.min(Bx[pos] / x[pos]) if np.all(pos) else 0.0
        hi = np.max(Bx[pos] / x[pos])
        x = Bx / Bx.sum()
        if hi - lo <= tol * hi:
            return float(0.5 * (hi + lo) - 1.0)
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _invert(W: np.ndarray, eps: float, label: str) -> tuple[np.ndarray, float]:
    n = W.shape[0]
    rho = spectral_radius(W)
    if rho >= 1.0 - eps:
        raise UnstableNetwork(rho, 1.0 - eps, label)
    I = np.eye(n)
    H = np.linalg.solve(I - W, I)
    resid = np.linalg.norm((I - W) @ H - I) / max(n, 1)
    if resid > 1e-10:
        # one step of iterative refinement
        H = H + np.linalg.solve(I - W, I - (I - W) @ H)
    if np.all(W >= 0):
        # (I - W)^-1 = sum W^k is nonnegative; remove roundoff below zero
        H = np.maximum(H, 0.0)
    return H, rho


def leontief(W, *, eps: float = DEFAULT_EPS) -> np.ndarray:
    """``(I - W)^-1`` for a single matrix."""
    return _invert(np.asarray(W, dtype=float), eps, "")[0]


def leontief_inverse(net: IoNetwork, *, eps: float = DEFAULT_EPS) -> LeontiefPair:
    """Leontief inverses of both propagation matrices.

    Raises
    ------
    UnstableNetwork
        If either matrix has spectral radius at or above ``1 - eps``.
    """
    h_up, r_up = _invert(net.w_up, eps, "w_up")
    h_down, r_down = _invert(net.w_down, eps, "w_down")
    return LeontiefPair(h_up=h_up, h_down=h_down, labels=net.labels, radius_up=r_up, radius_down=r_down)


def first_order(net: IoNetwork) -> LeontiefPair:
    """``I + W`` approximation of both Leontief inverses."""
    I = np.eye(net.n)
    return LeontiefPair(h_up=I + net.w_up, h_down=I + net.w_down, labels=net.labels)


def eigenvector_centrality(
    W, *, max_iter: int = 10_000, tol: float = 1e-12
) -> np.ndarray:
    """Leading left eigenvector of ``W`` (in-link centrality), unit L1 norm.

    Iterates ``x <- (W + I).T x`` so periodic graphs still converge.
    """
    A = np.asarray(W, dtype=float)
    n = A.shape[0]
    B = (A + np.eye(n)).T
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        x_new = B @ x
        x_new /= np.abs(x_new).sum()
        if np.abs(x_new - x).sum() < tol:
            return x_new
        x = x_new
    raise NonConvergence(f"power iteration did not converge in {max_iter} iterations")


def degrees(W) -> tuple[np.ndarray, np.ndarray]:
    """Weighted (in, out) degree: column and row sums."""
    W = np.asarray(W, dtype=float)
    return W.sum(axis=0), W.sum(axis=1)


def network_stats(net: IoNetwork, *, max_iter: int = 10_000, tol: float = 1e-12) -> NetworkStats:
    mats = {"up": net.w_up, "down": net.w_down}
    a, b = net.w_up.ravel(), net.w_down.ravel()
    if a.std() == 0 or b.std() == 0:
        xcorr = float("nan")
    else:
        xcorr = float(np.corrcoef(a, b)[0, 1])
    return NetworkStats(
        labels=net.labels,
        in_degree={k: degrees(w)[0] for k, w in mats.items()},
        out_degree={k: degrees(w)[1] for k, w in mats.items()},
        centrality={k: eigenvector_centrality(w, max_iter=max_iter, tol=tol) for k, w in mats.items()},
        spectral_radius={k: spectral_radius(w) for k, w in mats.items()},
        cross_correlation=xcorr,
    )


def read_tables(make_csv, use_csv, totals_csv, *, period: str = "") -> MakeUseTables:
    """Load long-format make/use tables and industry totals.

    ``make.csv``: industry_id, commodity_id, value
    ``use.csv``: commodity_id, industry_id, value
    ``totals.csv``: industry_id, output, scrap[, costs]

    Industries that appear in make/use but not in totals are dropped with a
    warning; the dropped ids are kept in ``metadata["dropped"]``.
    """
    make = pd.read_csv(make_csv, comment="#", dtype={"industry_id": str, "commodity_id": str})
    use = pd.read_csv(use_csv, comment="#", dtype={"industry_id": str, "commodity_id": str})
    totals = pd.read_csv(totals_csv, comment="#", dtype={"industry_id": str})
    for df, cols, name in (
        (make, {"industry_id", "commodity_id", "value"}, "make"),
        (use, {"commodity_id", "industry_id", "value"}, "use"),
        (totals, {"industry_id", "output", "scrap"}, "totals"),
    ):
        missing = cols - set(df.columns)
        if missing:
            raise ShapeMismatch(f"{name} table lacks columns {sorted(missing)}")
    if totals["industry_id"].duplicated().any():
        raise ValidationError("duplicate industry ids in totals")

    labels = list(totals["industry_id"])
    known = set(labels)
    seen = set(make["industry_id"]) | set(make["commodity_id"]) | set(use["industry_id"]) | set(use["commodity_id"])
    dropped = sorted(seen - known)
    if dropped:
        warnings.warn(f"dropping industries absent from totals: {dropped}", stacklevel=2)
        make = make[make["industry_id"].isin(known) & make["commodity_id"].isin(known)]
        use = use[use["industry_id"].isin(known) & use["commodity_id"].isin(known)]

    index = {lab: k for k, lab in enumerate(labels)}
    n = len(labels)
    M = np.zeros((n, n))
    U = np.zeros((n, n))
    np.add.at(M, (make["industry_id"].map(index).to_numpy(), make["commodity_id"].map(index).to_numpy()), make["value"].to_numpy(float))
    np.add.at(U, (use["commodity_id"].map(index).to_numpy(), use["industry_id"].map(index).to_numpy()), use["value"].to_numpy(float))
    costs = totals["costs"].to_numpy(float) if "costs" in totals.columns else None
    return MakeUseTables(
        make=M,
        use=U,
        output=totals["output"].to_numpy(float),
        scrap=totals["scrap"].to_numpy(float),
        labels=tuple(labels),
        costs=costs,
        period=period,
        metadata={"dropped": dropped, "reindex": labels},
    )
