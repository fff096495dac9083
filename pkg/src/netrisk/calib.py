"""Firm-level shock sigmoids calibrated to residual moments, and the
aggregate propagation factors they imply.

A firm's shock probability is ``g(s) = expit(-k (s - x))`` in its
substitutability ``s``. Two targets pin ``(k, x)``: the Bernoulli variance at
the mean substitutability,

    ``e^{k(s - x)} / (1 + e^{k(s - x)})^2 = var``,

and the network share

    ``(1 + e^{k(s - x)})^2 / (1 + e^{-k x})^2 = omega``.

Both invert in closed form, so no iterative solver is needed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .errors import MissingCalibration, NoSolution, RankDeficient, ValidationError
from .netsim import propensity
from .regression import FitResult, ols, standardize

DIRECTIONS = ("u", "d")
RESID_TOL = 1e-8


@dataclass(frozen=True)
class FirmCalibration:
    firm: str
    direction: str
    k: float
    x: float
    s_bar: float
    var_target: float
    omega: float
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = ";".join(self.flags)
        return d


def calibration_targets(k: float, x: float, s_bar: float) -> tuple[float, float]:
    """Evaluate ``(var, omega)`` at ``(k, x)``; the inverse of :func:`solve_firm_params`."""
    u = k * (s_bar - x)
    # e^u / (1 + e^u)^2 written to stay finite for large |u|
    var = float(np.exp(-np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)))
    omega = float(np.exp(2.0 * (np.logaddexp(0.0, u) - np.logaddexp(0.0, -k * x))))
    return var, omega


def solve_firm_params(var_target: float, omega: float, s_bar: float) -> tuple[float, float, tuple[str, ...]]:
    """Closed-form ``(k, x)`` for the variance and network-share targets.

    With ``p <= 0.5`` the root of ``p (1 - p) = var``, ``u = k (s_bar - x)``
    equals ``log((1 - p) / p)``. The second target gives
    ``c = k x = -log((1 + e^u) / sqrt(omega) - 1)``, hence
    ``k = (u + c) / s_bar`` and ``x = c / k``.

    Returns
    -------
    k, x, flags
        ``flags`` holds ``"degenerate_k"`` when ``k = 0`` (then ``x = s_bar``)
        and ``"upper_root_available"`` when ``1 - p`` would also fit the
        variance target.

    Raises
    ------
    NoSolution
        Targets outside ``var in (0, 0.25]``, ``omega in (0, 1]``, no
        ``k >= 0`` exists, or the targets are reproduced only to worse than
        ``1e-8``.
    """
    if not (0.0 < var_target <= 0.25):
        raise NoSolution(f"variance target {var_target!r} outside (0, 0.25]", residual=max(var_target - 0.25, -var_target))
    if not (0.0 < omega <= 1.0):
        raise NoSolution(f"network share {omega!r} outside (0, 1]", residual=max(omega - 1.0, -omega))
    if not np.isfinite(s_bar):
        raise ValidationError("s_bar must be finite")
    # smaller root of p (1 - p) = var, without cancellation for small var
    p = 2.0 * var_target / (1.0 + np.sqrt(max(1.0 - 4.0 * var_target, 0.0)))
    u = float(np.log1p(-p) - np.log(p))
    flags = [] if p == 0.5 else ["upper_root_available"]
    # (1 + e^u) / sqrt(omega) - 1 >= 1 because e^u >= 1 and omega <= 1
    c = -float(np.log(np.exp(np.logaddexp(0.0, u) - 0.5 * np.log(omega)) - 1.0))
    ks_bar = u + c
    if abs(ks_bar) <= 1e-12 * max(1.0, u):
        # k s_bar = 0: either k = 0, which needs u = 0, or s_bar = 0
        if u == 0.0:
            return 0.0, float(s_bar), tuple(flags + ["degenerate_k"])
        raise NoSolution("targets require k = 0 with p != 0.5", residual=abs(0.25 - var_target))
    if s_bar == 0.0:
        raise NoSolution("s_bar = 0 is incompatible with the targets", residual=abs(ks_bar))
    k = ks_bar / s_bar
    if k < 0:
        raise NoSolution(f"targets imply k = {k:.6g} < 0", residual=-k)
    k, x = float(k), float(c / k)
    v, w = calibration_targets(k, x, s_bar)
    resid = max(abs(v - var_target), abs(w - omega))
    if resid > RESID_TOL:
        raise NoSolution("closed form lost precision", residual=resid)
    return k, x, tuple(flags)


def calibrate_firms(targets: pd.DataFrame, *, tol: float = 1e-8) -> list[FirmCalibration]:
    """Solve every row of ``targets`` (firm, direction, var_target, omega, s_bar).

    Rows are processed in input order. Rows without a solution are kept with
    ``k = x = nan`` and a ``no_solution`` flag.
    """
    need = {"firm", "direction", "var_target", "omega", "s_bar"}
    missing = need - set(targets.columns)
    if missing:
        raise ValidationError(f"calibration targets missing columns {sorted(missing)}")
    out = []
    for row in targets.itertuples(index=False):
        if row.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be 'u' or 'd', got {row.direction!r}")
        try:
            k, x, flags = solve_firm_params(row.var_target, row.omega, row.s_bar)
        except NoSolution:
            out.append(FirmCalibration(str(row.firm), row.direction, np.nan, np.nan, row.s_bar, row.var_target, row.omega, ("no_solution",)))
            continue
        v, w = calibration_targets(k, x, row.s_bar)
        if max(abs(v - row.var_target), abs(w - row.omega)) > tol:
            flags = flags + ("residual_above_tol",)
        out.append(FirmCalibration(str(row.firm), row.direction, k, x, float(row.s_bar), float(row.var_target), float(row.omega), flags))
    return out


def calibrations_frame(cals: list[FirmCalibration]) -> pd.DataFrame:
    cols = ["firm", "direction", "k", "x", "s_bar", "var_target", "omega", "flags"]
    return pd.DataFrame([c.as_dict() for c in cals], columns=cols)


@dataclass
class PropagationFactorSeries:
    times: np.ndarray
    w_hat_u: np.ndarray
    w_hat_d: np.ndarray
    counts: dict = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "w_u": self.w_hat_u, "w_d": self.w_hat_d})


def _params(cals, firms, q: str) -> tuple[np.ndarray, np.ndarray]:
    table = {(c.firm, c.direction): c for c in cals}
    k, x = np.empty(len(firms)), np.empty(len(firms))
    for i, f in enumerate(firms):
        c = table.get((str(f), q))
        if c is None or not np.isfinite(c.k):
            raise MissingCalibration(f"no usable calibration for firm {f!r}, direction {q!r}")
        k[i], x[i] = c.k, c.x
    return k, x


def propagation_factors(substitutability: dict, calibrations: list[FirmCalibration]) -> PropagationFactorSeries:
    """Cross-sectional mean shock propensity per period and direction.

    Parameters
    ----------
    substitutability : dict
        ``{"u": frame, "d": frame}`` with firms as rows and periods as
        columns. Missing values mark firms absent in that period and are
        left out of both numerator and count.
    """
    series, counts, times = {}, {}, None
    for q in DIRECTIONS:
        if q not in substitutability:
            raise ValidationError(f"missing substitutability panel for direction {q!r}")
        S = substitutability[q]
        if not isinstance(S, pd.DataFrame):
            S = pd.DataFrame(np.asarray(S, dtype=float))
        if times is None:
            times = np.asarray(S.columns)
        elif not np.array_equal(times, np.asarray(S.columns)):
            raise ValidationError("direction panels must share periods")
        k, x = _params(calibrations, [str(f) for f in S.index], q)
        s = S.to_numpy(dtype=float)
        avail = np.isfinite(s)
        p = np.where(avail, propensity(np.where(avail, s, 0.0), k[:, None], x[:, None]), 0.0)
        n_t = avail.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            series[q] = np.where(n_t > 0, p.sum(axis=0) / np.maximum(n_t, 1), np.nan)
        counts[q] = n_t
    return PropagationFactorSeries(times, series["u"], series["d"], counts)


REGRESSORS = ("w_u", "w_d", "a", "g")


def macro_regressions(factors: pd.DataFrame, outcomes: pd.DataFrame, controls: pd.DataFrame | None = None) -> pd.DataFrame:
    """Standardized OLS of each outcome on the propagation factors and ``a``, ``g``.

    All inputs are indexed by time and inner-joined. Every series, outcome
    and regressor alike, is standardized to zero mean and unit variance
    before fitting with an intercept.

    Returns
    -------
    DataFrame
        One row per (outcome, regressor) with ``coef``, ``se``, ``t``,
        ``r2`` and ``nobs``.
    """
    X = factors.copy()
    if controls is not None:
        X = X.join(controls, how="inner")
    missing = [c for c in REGRESSORS if c not in X.columns]
    if missing:
        raise ValidationError(f"regressors missing: {missing}")
    data = X[list(REGRESSORS)].join(outcomes, how="inner").dropna()
    if len(data) < len(REGRESSORS) + 2:
        raise RankDeficient("too few aligned periods")
    Z = standardize(data[list(REGRESSORS)].to_numpy())
    design = np.column_stack([np.ones(len(data)), Z])
    rows = []
    for name in outcomes.columns:
        y = standardize(data[name].to_numpy())
        fit = ols(y, design, names=["const", *REGRESSORS], has_const=True)
        for j, reg in enumerate(REGRESSORS, start=1):
            rows.append({"outcome": name, "regressor": reg, "coef": fit.coef[j], "se": fit.se[j],
                         "t": fit.tstat[j], "r2": fit.r2, "nobs": fit.nobs})
    return pd.DataFrame(rows)


def _absorb(M: np.ndarray, groups: list[np.ndarray], tol: float = 1e-12, max_iter: int = 1000) -> np.ndarray:
    """Remove group means for one or more fixed effects by alternating projections."""
    M = M.astype(float, copy=True)
    for _ in range(max_iter):
        prev = M.copy()
        for g in groups:
            _, inv = np.unique(g, return_inverse=True)
            sums = np.zeros((inv.max() + 1, M.shape[1]))
            np.add.at(sums, inv, M)
            M -= (sums / np.bincount(inv)[:, None])[inv]
        if len(groups) == 1 or np.max(np.abs(M - prev)) <= tol * max(1.0, np.max(np.abs(prev))):
            return M
    raise RankDeficient("fixed-effect demeaning did not converge")


def control_regression(
    frame: pd.DataFrame,
    outcome: str,
    regressors: list[str],
    *,
    fixed_effects: tuple[str, ...] = ("firm",),
    cluster: str | None = None,
) -> FitResult:
    """Firm-level OLS with absorbed fixed effects and optional clustering."""
    cols = [outcome, *regressors, *fixed_effects] + ([cluster] if cluster else [])
    missing = sorted(set(cols) - set(frame.columns))
    if missing:
        raise ValidationError(f"columns missing: {missing}")
    data = frame[list(dict.fromkeys(cols))].dropna()
    M = data[[outcome, *regressors]].to_numpy(dtype=float)
    if fixed_effects:
        M = _absorb(M, [data[c].to_numpy() for c in fixed_effects])
        X, has_const = M[:, 1:], False
    else:
        X, has_const = np.column_stack([np.ones(len(M)), M[:, 1:]]), True
    names = list(regressors) if fixed_effects else ["const", *regressors]
    return ols(M[:, 0], X, cluster=data[cluster].to_numpy() if cluster else None, names=names, has_const=has_const)
