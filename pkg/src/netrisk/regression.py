"""Least-squares engine shared by the panel, calibration and portfolio code.

OLS and two-stage least squares with homoskedastic or cluster-robust
covariance. Everything works on plain arrays; callers own the bookkeeping of
names and indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficient


@dataclass
class FitResult:
    coef: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    resid: np.ndarray
    r2: float
    nobs: int
    names: list[str] = field(default_factory=list)

    @property
    def tstat(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    def as_dict(self) -> dict:
        names = self.names or [f"x{k}" for k in range(len(self.coef))]
        return {
            "coef": dict(zip(names, map(float, self.coef))),
            "se": dict(zip(names, map(float, self.se))),
            "t": dict(zip(names, map(float, self.tstat))),
            "r2": float(self.r2),
            "nobs": int(self.nobs),
        }


def _check_rank(X: np.ndarray, what: str = "design") -> None:
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"{what} has {X.shape[0]} rows for {X.shape[1]} columns")
    # scale columns so the rank test is unit free
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise RankDeficient(f"{what} has an all-zero column")
    s = np.linalg.svd(X / norms, compute_uv=False)
    if s[-1] <= s[0] * max(X.shape) * 1e-12:
        raise RankDeficient(f"{what} is rank deficient (condition {s[0] / max(s[-1], 1e-300):.3g})")


def _meat(Xs: np.ndarray, u: np.ndarray, cluster: np.ndarray) -> tuple[np.ndarray, int]:
    labels, inv = np.unique(cluster, return_inverse=True)
    scores = np.zeros((len(labels), Xs.shape[1]))
    np.add.at(scores, inv, Xs * u[:, None])
    return scores.T @ scores, len(labels)


def _r2(y: np.ndarray, u: np.ndarray, has_const: bool) -> float:
    tss = np.sum((y - y.mean()) ** 2) if has_const else np.sum(y**2)
    if tss == 0:
        return float("nan")
    return float(1.0 - np.sum(u**2) / tss)


def ols(
    y,
    X,
    *,
    cluster=None,
    names: list[str] | None = None,
    has_const: bool | None = None,
) -> FitResult:
    """Ordinary least squares.

    Parameters
    ----------
    y : (N,) array
    X : (N, K) array
        Design matrix; include a constant column yourself if wanted.
    cluster : (N,) array, optional
        Cluster labels for a one-way cluster-robust covariance with the usual
        small-sample correction ``G/(G-1) * (N-1)/(N-K)``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    _check_rank(X)
    n, k = X.shape
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    u = y - X @ coef
    bread = np.linalg.inv(X.T @ X)
    dof = max(n - k, 1)
    if cluster is None:
        cov = bread * (u @ u) / dof
    else:
        meat, g = _meat(X, u, np.asarray(cluster))
        c = (g / max(g - 1, 1)) * ((n - 1) / dof)
        cov = c * bread @ meat @ bread
    if has_const is None:
        has_const = bool(np.any(np.all(X == X[0], axis=0) & (X[0] != 0)))
    return FitResult(
        coef=coef,
        se=np.sqrt(np.clip(np.diag(cov), 0, None)),
        cov=cov,
        resid=u,
        r2=_r2(y, u, has_const),
        nobs=n,
        names=list(names) if names else [],
    )


def tsls(y, X, Z, *, cluster=None, names: list[str] | None = None) -> FitResult:
    """Two-stage least squares of ``y`` on ``X`` with instrument matrix ``Z``.

    ``Z`` must contain every exogenous column of ``X`` as well as the excluded
    instruments. Residuals are structural (``y - X b``), not second-stage.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    _check_rank(Z, "instrument matrix")
    n, k = X.shape
    if Z.shape[1] < k:
        raise RankDeficient("fewer instruments than regressors")
    gamma, *_ = np.linalg.lstsq(Z, X, rcond=None)
    Xh = Z @ gamma
    _check_rank(Xh, "first-stage fitted design")
    bread = np.linalg.inv(Xh.T @ Xh)
    coef = bread @ (Xh.T @ y)
    u = y - X @ coef
    dof = max(n - k, 1)
    if cluster is None:
        cov = bread * (u @ u) / dof
    else:
        meat, g = _meat(Xh, u, np.asarray(cluster))
        c = (g / max(g - 1, 1)) * ((n - 1) / dof)
        cov = c * bread @ meat @ bread
    return FitResult(
        coef=coef,
        se=np.sqrt(np.clip(np.diag(cov), 0, None)),
        cov=cov,
        resid=u,
        r2=_r2(y, u, has_const=False),
        nobs=n,
        names=list(names) if names else [],
    )


def standardize(a, axis: int = 0, ddof: int = 1) -> np.ndarray:
    """Zero mean, unit standard deviation along ``axis``."""
    a = np.asarray(a, dtype=float)
    mu = a.mean(axis=axis, keepdims=True)
    sd = a.std(axis=axis, ddof=ddof, keepdims=True)
    if np.any(sd == 0):
        raise RankDeficient("cannot standardize a constant series")
    return (a - mu) / sd
