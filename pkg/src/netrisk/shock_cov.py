"""Covariance of unit shocks from panel residuals, observed shocks or distances.

Three sources feed the same :class:`ShockCovariance` container:

* ``spatial``: residuals of the spatial autoregressive panel fitted by
  :func:`fit_spatial_panel`;
* ``observed``: directly observed shocks, stripped of their common component
  by a regression on the cross-sectional mean;
* ``distance``: a latent-position distance matrix mapped to correlations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from .errors import (
    InsufficientPeriods,
    InvalidCovariance,
    OutOfRangeDistance,
    RankDeficient,
    ShapeMismatch,
    ValidationError,
)
from .io_tables import IoNetwork
from .regression import FitResult, tsls

PROVENANCES = ("spatial", "observed", "distance")


@dataclass(frozen=True)
class PanelData:
    """Long ``(unit, time, value[, cluster])`` panel."""

    frame: pd.DataFrame

    def __post_init__(self):
        df = self.frame
        missing = {"unit", "time", "value"} - set(df.columns)
        if missing:
            raise ShapeMismatch(f"panel lacks columns {sorted(missing)}")
        df = df.copy()
        df["unit"] = df["unit"].astype(str)
        df["time"] = df["time"].astype(int)
        df["value"] = df["value"].astype(float)
        if df.duplicated(["unit", "time"]).any():
            raise ValidationError("(unit, time) pairs must be unique")
        if not np.all(np.isfinite(df["value"].to_numpy())):
            raise ValidationError("panel values must be finite")
        object.__setattr__(self, "frame", df.sort_values(["unit", "time"], kind="stable").reset_index(drop=True))

    @classmethod
    def from_matrix(cls, Y, units=None, times=None) -> "PanelData":
        """Build from a units x times matrix; NaN cells are treated as missing."""
        Y = np.asarray(Y, dtype=float)
        n, T = Y.shape
        units = [str(u) for u in (units if units is not None else range(n))]
        times = list(times if times is not None else range(T))
        df = pd.DataFrame(
            {"unit": np.repeat(units, T), "time": np.tile(times, n), "value": Y.ravel()}
        )
        return cls(df[np.isfinite(df["value"])])

    @property
    def has_cluster(self) -> bool:
        return "cluster" in self.frame.columns

    def to_matrix(self, units=None) -> tuple[np.ndarray, list[str], list[int]]:
        """Wide units x times matrix (NaN where missing) in ``units`` order."""
        wide = self.frame.pivot(index="unit", columns="time", values="value")
        if units is not None:
            units = [str(u) for u in units]
            if set(units) != set(wide.index):
                raise ShapeMismatch("panel units do not match the requested unit set")
            wide = wide.loc[units]
        return wide.to_numpy(dtype=float), [str(u) for u in wide.index], [int(t) for t in wide.columns]

    def clusters(self, units: list[str]) -> np.ndarray | None:
        if not self.has_cluster:
            return None
        lab = self.frame.groupby("unit")["cluster"].first()
        return lab.loc[units].to_numpy()


@dataclass
class ShockCovariance:
    sigma: np.ndarray
    provenance: str
    labels: tuple[str, ...] = ()
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        S = np.asarray(self.sigma, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ShapeMismatch(f"sigma must be square, got {S.shape}")
        if not np.all(np.isfinite(S)):
            raise InvalidCovariance("sigma has non-finite entries")
        scale = max(1.0, float(np.abs(S).max(initial=0.0)))
        if np.abs(S - S.T).max(initial=0.0) > 1e-12 * scale:
            raise InvalidCovariance("sigma is not symmetric")
        if np.any(np.diag(S) < 0):
            raise InvalidCovariance("sigma has a negative variance")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"provenance must be one of {PROVENANCES}")
        self.sigma = 0.5 * (S + S.T)
        self.labels = tuple(str(x) for x in self.labels) or tuple(str(i) for i in range(S.shape[0]))

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def sign(self) -> np.ndarray:
        return np.sign(self.sigma).astype(int)

    @property
    def correlation(self) -> np.ndarray:
        sd = np.sqrt(np.diag(self.sigma))
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.sigma / np.outer(sd, sd)


@dataclass
class SpatialFit:
    phi: float
    beta_u: float
    beta_d: float
    se: dict[str, float]
    residuals: np.ndarray
    units: list[str]
    times: list[int]
    fit: FitResult
    dropped: list[str] = field(default_factory=list)
    clustered: bool = False

    @property
    def coef(self) -> dict[str, float]:
        return {"phi": self.phi, "beta_u": self.beta_u, "beta_d": self.beta_d}

    def as_dict(self) -> dict:
        return {
            "coef": self.coef,
            "se": dict(self.se),
            "nobs": self.fit.nobs,
            "dropped_regressors": list(self.dropped),
            "method": "2sls",
            "clustered": self.clustered,
        }


def _demean_time(A: np.ndarray) -> np.ndarray:
    # within-period demeaning absorbs the time fixed effects
    return A - A.mean(axis=0, keepdims=True)


def fit_spatial_panel(panel: PanelData, net: IoNetwork, *, cluster: bool | None = None) -> SpatialFit:
    """Spatial autoregressive panel with time fixed effects.

    Fits ``y[i,t] = d[t] + phi*y[i,t-1] + b_u*(W_u y_t)[i] + b_d*(W_d y_t)[i] + e``
    on a balanced panel. The contemporaneous network lags are endogenous, so
    the estimator is two-stage least squares with instruments
    ``y_{t-1}, W_u y_{t-1}, W_d y_{t-1}, W_u^2 y_{t-1}, W_d^2 y_{t-1}, W_u W_d y_{t-1}``.
    All variables are demeaned within period first. Network-lag regressors
    that are identically zero (empty network) are dropped and reported with a
    zero coefficient.

    Parameters
    ----------
    cluster : bool, optional
        Use cluster-robust standard errors on the panel's ``cluster`` column.
        Defaults to whether that column exists.
    """
    Y, units, times = panel.to_matrix(net.labels)
    n, T = Y.shape
    if T < 3:
        raise InsufficientPeriods(f"need at least 3 periods, got {T}")
    if np.isnan(Y).any():
        raise ValidationError("spatial panel must be balanced (no missing unit-periods)")

    y = Y[:, 1:]
    ylag = Y[:, :-1]
    Wu, Wd = net.w_up, net.w_down
    regs = {"phi": ylag, "beta_u": Wu @ y, "beta_d": Wd @ y}
    inst = [ylag, Wu @ ylag, Wd @ ylag, Wu @ (Wu @ ylag), Wd @ (Wd @ ylag), Wu @ (Wd @ ylag)]

    def col(A):
        return _demean_time(A).ravel()

    yv = col(y)
    X_all = {k: col(v) for k, v in regs.items()}
    if not np.any(X_all["phi"]):
        raise RankDeficient("lagged outcome has no variation after removing time effects")
    keep = [k for k, v in X_all.items() if np.any(np.abs(v) > 1e-300)]
    dropped = [k for k in X_all if k not in keep]
    X = np.column_stack([X_all[k] for k in keep])
    Z = np.column_stack([c for c in map(col, inst) if np.any(np.abs(c) > 1e-300)])
    # drop instruments that duplicate an earlier one (e.g. W_u == W_d)
    Z = _independent_columns(Z)

    use_cluster = panel.has_cluster if cluster is None else cluster
    groups = None
    if use_cluster:
        cl = panel.clusters(units)
        if cl is None:
            raise ValidationError("cluster-robust errors requested but the panel has no cluster column")
        groups = np.repeat(cl, T - 1)

    fit = tsls(yv, X, Z, cluster=groups, names=keep)
    coef = dict(zip(keep, map(float, fit.coef)))
    se = dict(zip(keep, map(float, fit.se)))
    for k in dropped:
        coef[k] = 0.0
        se[k] = 0.0
    resid = fit.resid.reshape(n, T - 1)
    return SpatialFit(
        phi=coef["phi"],
        beta_u=coef["beta_u"],
        beta_d=coef["beta_d"],
        se=se,
        residuals=resid,
        units=units,
        times=times[1:],
        fit=fit,
        dropped=dropped,
        clustered=bool(use_cluster),
    )


def _independent_columns(Z: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    Zs = Z / np.linalg.norm(Z, axis=0)
    kept: list[int] = []
    for j in range(Z.shape[1]):
        cand = kept + [j]
        s = np.linalg.svd(Zs[:, cand], compute_uv=False)
        if s[-1] > tol * s[0]:
            kept.append(j)
    return Z[:, kept]


def simulate_spatial_panel(
    net: IoNetwork,
    T: int,
    *,
    phi: float,
    beta_u: float,
    beta_d: float,
    noise: float = 1.0,
    time_effects: float = 1.0,
    burn: int = 50,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw an ``n x T`` panel from the spatial autoregressive process."""
    n = net.n
    A = np.eye(n) - beta_u * net.w_up - beta_d * net.w_down
    Y = np.zeros((n, T + burn))
    prev = np.zeros(n)
    for t in range(T + burn):
        rhs = time_effects * rng.standard_normal() + phi * prev + noise * rng.standard_normal(n)
        prev = np.linalg.solve(A, rhs)
        Y[:, t] = prev
    return Y[:, burn:]


def _residualize_on_mean(Y: np.ndarray) -> np.ndarray:
    """Residual of each unit's series on an intercept and the cross-sectional mean."""
    f = np.nanmean(Y, axis=0)
    out = np.full_like(Y, np.nan)
    for i, row in enumerate(Y):
        ok = np.isfinite(row) & np.isfinite(f)
        if ok.sum() < 3:
            continue
        X = np.column_stack([np.ones(ok.sum()), f[ok]])
        b, *_ = np.linalg.lstsq(X, row[ok], rcond=None)
        out[i, ok] = row[ok] - X @ b
    return out


def estimate_covariance(
    data,
    mode: str = "spatial",
    *,
    labels=None,
    min_periods: int = 2,
) -> ShockCovariance:
    """Sample covariance of shocks with pairwise-complete observations.

    Parameters
    ----------
    data : PanelData, SpatialFit or (n, T) array
        Residuals (``mode="spatial"``) or raw shocks (``mode="observed"``).
    mode : {"spatial", "observed"}
        ``observed`` first removes each unit's loading on the
        cross-sectional mean shock.
    min_periods : int
        Pairs with fewer overlapping observations get a zero entry and are
        listed in ``flags["too_few_observations"]``.
    """
    if isinstance(data, SpatialFit):
        Y, labels = data.residuals, data.units
    elif isinstance(data, PanelData):
        Y, labels, _ = data.to_matrix(labels)
    else:
        Y = np.asarray(data, dtype=float)
    if Y.ndim != 2:
        raise ShapeMismatch("shock data must be a units x times matrix")
    if mode not in ("spatial", "observed"):
        raise ValidationError(f"mode must be 'spatial' or 'observed', got {mode!r}")
    if mode == "observed":
        Y = _residualize_on_mean(Y)

    S = pd.DataFrame(Y.T).cov(min_periods=max(int(min_periods), 2)).to_numpy()
    bad = ~np.isfinite(S)
    pairs = [(int(i), int(j)) for i, j in zip(*np.nonzero(np.triu(bad)))]
    S[bad] = 0.0
    S = 0.5 * (S + S.T)
    flags = {"too_few_observations": pairs, "min_periods": int(min_periods)}
    return ShockCovariance(sigma=S, provenance=mode, labels=tuple(labels or ()), flags=flags)


def linear_distance_map(d: np.ndarray) -> np.ndarray:
    """Correlation ``1 - 2 d``: coincident points give 1, the furthest give -1."""
    return 1.0 - 2.0 * d


def nearest_psd(S: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip negative eigenvalues at zero, then restore the original diagonal.

    Returns the adjusted matrix and the Frobenius norm of the change.
    """
    vals, vecs = np.linalg.eigh(S)
    if vals.min() >= 0:
        return S, 0.0
    P = (vecs * np.clip(vals, 0, None)) @ vecs.T
    P = 0.5 * (P + P.T)
    d = np.sqrt(np.clip(np.diag(P), 1e-300, None))
    target = np.sqrt(np.diag(S))
    P = P * np.outer(target / d, target / d)
    return P, float(np.linalg.norm(P - S))


def distance_to_covariance(
    distances,
    variances,
    *,
    corr_map: Callable[[np.ndarray], np.ndarray] = linear_distance_map,
    project_psd: bool = True,
    labels=None,
    atol: float = 1e-12,
) -> ShockCovariance:
    """Covariance implied by normalized latent distances.

    ``sigma[j, k] = corr_map(d[j, k]) * sqrt(v[j] v[k])`` with the variances on
    the diagonal. Indefinite results are projected to the PSD cone when
    ``project_psd``; the size of the adjustment is kept in ``flags``.
    """
    D = np.asarray(distances, dtype=float)
    v = np.asarray(variances, dtype=float).ravel()
    if D.ndim != 2 or D.shape[0] != D.shape[1] or D.shape[0] != v.size:
        raise ShapeMismatch("distances must be n x n with one variance per unit")
    if not np.all(np.isfinite(D)) or D.min(initial=0.0) < -atol or D.max(initial=0.0) > 1 + atol:
        raise OutOfRangeDistance("distances must lie in [0, 1]")
    if np.abs(D - D.T).max(initial=0.0) > atol or np.abs(np.diag(D)).max(initial=0.0) > atol:
        raise OutOfRangeDistance("distances must be symmetric with a zero diagonal")
    if np.any(v <= 0):
        raise InvalidCovariance("variances must be positive")
    D = np.clip(0.5 * (D + D.T), 0.0, 1.0)
    rho = corr_map(D)
    np.fill_diagonal(rho, 1.0)
    sd = np.sqrt(v)
    S = rho * np.outer(sd, sd)
    adj = 0.0
    if project_psd:
        S, adj = nearest_psd(S)
    return ShockCovariance(
        sigma=S,
        provenance="distance",
        labels=tuple(labels or ()),
        flags={"psd_adjustment": adj, "psd_projected": bool(adj > 0)},
    )
