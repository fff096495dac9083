"""Beta-sorted portfolios on the propagation factors.

Pipeline: rolling time-series betas per asset, yearly quantile sorts on one
beta, next-period portfolio returns, the high-minus-low spread, a bootstrap
test that bin means are monotone, and benchmark alphas.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._parallel import task_rng
from .errors import InsufficientData, RankDeficient, TooFewAssets, ValidationError
from .regression import _check_rank, ols

log = logging.getLogger(__name__)

FACTORS = ("a", "g", "w_u", "w_d")
BETA_NAMES = {"a": "beta_a", "g": "beta_g", "w_u": "beta_u", "w_d": "beta_d"}


def check_returns(panel: pd.DataFrame) -> pd.DataFrame:
    """Validate a long ``(asset, time, excess_return[, weight])`` panel."""
    need = {"asset", "time", "excess_return"}
    if not need <= set(panel.columns):
        raise ValidationError(f"returns need columns {sorted(need)}")
    if panel.duplicated(["asset", "time"]).any():
        raise ValidationError("(asset, time) pairs must be unique")
    if not np.all(np.isfinite(panel["excess_return"].to_numpy(dtype=float))):
        raise ValidationError("returns must be finite")
    if "weight" in panel and (panel["weight"] < 0).any():
        raise ValidationError("weights must be nonnegative")
    return panel.sort_values(["asset", "time"], kind="mergesort").reset_index(drop=True)


def returns_from_matrix(R: np.ndarray, times=None, assets=None) -> pd.DataFrame:
    """Long panel from an ``assets x times`` return matrix."""
    R = np.asarray(R, dtype=float)
    assets = np.arange(R.shape[0]) if assets is None else np.asarray(assets)
    times = np.arange(R.shape[1]) if times is None else np.asarray(times)
    return pd.DataFrame({
        "asset": np.repeat(assets, R.shape[1]),
        "time": np.tile(times, R.shape[0]),
        "excess_return": R.ravel(),
    })


def rolling_betas(
    panel: pd.DataFrame,
    factors: pd.DataFrame,
    window: int = 15,
    controls: pd.DataFrame | None = None,
) -> pd.DataFrame:
    """Per asset and end period ``t``, OLS of returns on factors over ``[t - window + 1, t]``.

    ``factors`` is indexed by time with columns ``a, g, w_u, w_d``; extra
    ``controls`` columns enter the regression but are not reported. Only
    assets with all ``window`` returns present are fitted. A rank deficient
    factor window is skipped for every asset and logged.
    """
    panel = check_returns(panel)
    missing = [c for c in FACTORS if c not in factors.columns]
    if missing:
        raise ValidationError(f"factors missing columns {missing}")
    X = factors[list(FACTORS)]
    if controls is not None:
        X = X.join(controls, how="inner")
    k = X.shape[1] + 1
    if window < k + 1:
        raise ValidationError(f"window must be at least {k + 1} for {k} coefficients")
    X = X.sort_index()
    times = X.index.to_numpy()
    design = np.column_stack([np.ones(len(X)), X.to_numpy(dtype=float)])
    # times x assets; periods without factor data drop out
    Y = panel.pivot(index="time", columns="asset", values="excess_return").reindex(times)
    assets = Y.columns.to_numpy()
    Yv = Y.to_numpy(dtype=float)
    frames = []
    for end in range(window - 1, len(times)):
        sl = slice(end - window + 1, end + 1)
        full = ~np.isnan(Yv[sl]).any(axis=0)
        if not full.any():
            continue
        try:
            _check_rank(design[sl])
        except RankDeficient:
            log.info("rank deficient factor window ending %s", times[end])
            continue
        coef, *_ = np.linalg.lstsq(design[sl], Yv[sl][:, full], rcond=None)
        block = pd.DataFrame(coef[1:len(FACTORS) + 1].T, columns=[BETA_NAMES[f] for f in FACTORS])
        block.insert(0, "time", times[end])
        block.insert(0, "asset", assets[full])
        frames.append(block)
    cols = ["asset", "time", *(BETA_NAMES[f] for f in FACTORS)]
    if not frames:
        return pd.DataFrame(columns=cols)
    return pd.concat(frames, ignore_index=True).sort_values(["asset", "time"], kind="mergesort").reset_index(drop=True)[cols]


def assign_bins(values: np.ndarray, ids: np.ndarray, n_bins: int, boundary: str = "lower") -> np.ndarray:
    """Quantile bins ``0 .. n_bins - 1`` by rank, ties broken by ``ids``.

    With ``m`` assets the asset of rank ``r`` goes to bin
    ``ceil((r + 1) n_bins / m) - 1``, so an asset on a boundary joins the
    lower bin; ``boundary="upper"`` uses ``floor(r n_bins / m)`` instead.
    """
    m = len(values)
    order = np.lexsort((ids, values))
    rank = np.empty(m, dtype=np.int64)
    rank[order] = np.arange(m)
    if boundary == "lower":
        # integer form of ceil((r + 1) n / m) - 1
        return -((-(rank + 1) * n_bins) // m) - 1
    if boundary == "upper":
        return (rank * n_bins) // m
    raise ValidationError("boundary must be 'lower' or 'upper'")


@dataclass
class PortfolioTable:
    ew: pd.DataFrame
    vw: pd.DataFrame | None
    beta: str
    n_bins: int
    flags: dict = field(default_factory=dict)

    @staticmethod
    def _spread_stats(tab: pd.DataFrame) -> dict:
        hl = (tab.iloc[:, -1] - tab.iloc[:, 0]).to_numpy()
        mean = float(hl.mean())
        sd = float(hl.std(ddof=1)) if hl.size > 1 else float("nan")
        if not sd > 0:
            return {"spread": mean, "se": sd, "t": float("nan"), "t_undefined": True, "years": int(hl.size)}
        se = sd / np.sqrt(hl.size)
        return {"spread": mean, "se": se, "t": mean / se, "t_undefined": False, "years": int(hl.size)}

    def bin_means(self, weighting: str = "ew") -> np.ndarray:
        return self._table(weighting).mean(axis=0).to_numpy()

    def spread(self, weighting: str = "ew") -> dict:
        return self._spread_stats(self._table(weighting))

    def _table(self, weighting: str) -> pd.DataFrame:
        if weighting == "ew":
            return self.ew
        if weighting == "vw" and self.vw is not None:
            return self.vw
        raise ValidationError(f"no {weighting!r} returns available")

    def long_frame(self) -> pd.DataFrame:
        out = []
        for name, tab in (("ew", self.ew), ("vw", self.vw)):
            if tab is None:
                continue
            t = tab.stack().rename("ret").reset_index()
            t.columns = ["time", "bin", "ret"]
            t.insert(0, "weighting", name)
            out.append(t)
        return pd.concat(out, ignore_index=True)


def sort_and_spread(
    betas: pd.DataFrame,
    returns: pd.DataFrame,
    *,
    beta: str = "beta_u",
    n_bins: int = 5,
    boundary: str = "lower",
) -> PortfolioTable:
    """Sort on ``beta`` at each formation period and hold for the next period.

    Holding returns come from the next period present in ``returns``. Value
    weights use the ``weight`` column at formation when available. Bins are
    numbered from low to high beta; the spread is high minus low.

    Raises
    ------
    TooFewAssets
        A formation period has fewer assets with a next-period return than
        bins.
    """
    if n_bins < 2:
        raise ValidationError("n_bins must be at least 2")
    returns = check_returns(returns)
    if beta not in betas.columns:
        raise ValidationError(f"betas lack column {beta!r}")
    times = np.sort(returns["time"].unique())
    nxt = dict(zip(times[:-1], times[1:]))
    ret = returns.set_index(["asset", "time"])["excess_return"]
    wt = returns.set_index(["asset", "time"])["weight"] if "weight" in returns else None
    ew_rows, vw_rows, idx = [], [], []
    for t, grp in betas.groupby("time", sort=True):
        if t not in nxt:
            continue
        keys = list(zip(grp["asset"], [nxt[t]] * len(grp)))
        r = ret.reindex(keys).to_numpy()
        ok = np.isfinite(r) & np.isfinite(grp[beta].to_numpy(dtype=float))
        if ok.sum() < n_bins:
            raise TooFewAssets(f"period {t}: {int(ok.sum())} assets for {n_bins} bins")
        g = grp[ok]
        r = r[ok]
        bins = assign_bins(g[beta].to_numpy(dtype=float), g["asset"].to_numpy(), n_bins, boundary)
        counts = np.bincount(bins, minlength=n_bins)
        ew_rows.append(np.bincount(bins, weights=r, minlength=n_bins) / counts)
        if wt is not None:
            w = wt.reindex(list(zip(g["asset"], [t] * len(g)))).to_numpy(dtype=float)
            w = np.where(np.isfinite(w), w, 0.0)
            tot = np.bincount(bins, weights=w, minlength=n_bins)
            with np.errstate(invalid="ignore", divide="ignore"):
                vw_rows.append(np.bincount(bins, weights=w * r, minlength=n_bins) / tot)
        idx.append(t)
    if not idx:
        raise InsufficientData("no formation period has a following period")
    cols = pd.RangeIndex(n_bins, name="bin")
    ew = pd.DataFrame(np.array(ew_rows), index=pd.Index(idx, name="time"), columns=cols)
    vw = pd.DataFrame(np.array(vw_rows), index=ew.index, columns=cols) if wt is not None else None
    return PortfolioTable(ew, vw, beta, n_bins)


def stationary_bootstrap(n_obs: int, mean_block: float, rng, size: int | None = None) -> np.ndarray:
    """Resampled time indices with geometric block lengths of mean ``mean_block``.

    Each position starts a new block (at a uniform random index) with
    probability ``1 / mean_block`` and otherwise continues the current one,
    wrapping around the end of the sample. With ``size`` the result is a
    ``(size, n_obs)`` array of independent replicates.
    """
    if n_obs < 1 or not mean_block >= 1:
        raise ValidationError("need n_obs >= 1 and mean_block >= 1")
    shape = (n_obs,) if size is None else (size, n_obs)
    starts = rng.integers(0, n_obs, shape)
    new = rng.random(shape) < 1.0 / mean_block
    new[..., 0] = True
    t = np.broadcast_to(np.arange(n_obs), shape)
    first = np.maximum.accumulate(np.where(new, t, 0), axis=-1)
    return (np.take_along_axis(starts, first, axis=-1) + t - first) % n_obs


@dataclass(frozen=True)
class MRResult:
    p_value: float
    statistic: float
    orientation: str
    n_boot: int
    block: float


def mr_test(
    bin_means_by_year,
    n_boot: int = 2000,
    seed: int = 0,
    *,
    block: float = 2.0,
    orientation: str = "decreasing",
) -> MRResult:
    """Bootstrap test that mean returns are monotone across bins.

    The null is that the pattern is not strictly monotone in the chosen
    orientation; the alternative is that every adjacent difference has the
    right sign. With ``d_k`` the mean of ``x_{k+1} - x_k`` (sign flipped for
    ``"decreasing"``), the statistic is ``min_k d_k``. Bootstrap replicates
    are recentered at the sample differences, and the p-value is the share
    of replicates whose minimum reaches the observed one.

    Parameters
    ----------
    bin_means_by_year : (years, bins) array or DataFrame
    """
    X = np.asarray(bin_means_by_year, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2 or X.shape[0] < 2:
        raise InsufficientData("need at least 2 bins and 2 years")
    if not np.all(np.isfinite(X)):
        raise ValidationError("bin means must be finite")
    if orientation not in ("decreasing", "increasing"):
        raise ValidationError("orientation must be 'decreasing' or 'increasing'")
    sign = -1.0 if orientation == "decreasing" else 1.0
    D = sign * np.diff(X, axis=1)
    d = D.mean(axis=0)
    stat = float(d.min())
    idx = stationary_bootstrap(X.shape[0], block, task_rng(seed), n_boot)
    boot = (D[idx].mean(axis=1) - d).min(axis=1)
    return MRResult(float(np.mean(boot >= stat)), stat, orientation, n_boot, block)


BENCHMARKS = {"capm": ("mkt",), "ff3": ("mkt", "smb", "hml")}


def alphas(portfolios: pd.DataFrame, benchmarks: pd.DataFrame, model: str = "capm") -> pd.DataFrame:
    """OLS intercepts of each portfolio on the benchmark factors.

    ``portfolios`` has one column per portfolio and ``benchmarks`` the
    columns ``mkt`` (capm) or ``mkt, smb, hml`` (ff3), both indexed by time.
    """
    if model not in BENCHMARKS:
        raise ValidationError(f"model must be one of {sorted(BENCHMARKS)}")
    cols = list(BENCHMARKS[model])
    missing = [c for c in cols if c not in benchmarks.columns]
    if missing:
        raise ValidationError(f"benchmarks missing {missing}")
    data = portfolios.join(benchmarks[cols], how="inner", rsuffix="_bench").dropna()
    X = np.column_stack([np.ones(len(data)), data[cols].to_numpy(dtype=float)])
    rows = []
    for name in portfolios.columns:
        fit = ols(data[name].to_numpy(dtype=float), X, names=["alpha", *cols], has_const=True)
        row = {"portfolio": name, "alpha": fit.coef[0], "alpha_se": fit.se[0], "alpha_t": fit.tstat[0]}
        row.update({f"b_{c}": fit.coef[j] for j, c in enumerate(cols, start=1)})
        row["r2"] = fit.r2
        rows.append(row)
    return pd.DataFrame(rows)
