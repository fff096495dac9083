"""Dynamic economy with latent-driven propagation shocks.

Every period the product and technology circles move, each firm's
substitutability ``s_iq = log sum_{j != k} w_ij w_ik d_jk`` is recomputed, and
propagation shocks ``eps_iq ~ Bernoulli(p_iq)`` are drawn with
``p_iq = 1 / (1 + exp(k_iq (s_iq - x_iq)))``. Firm growth is

    dy_i = gamma_u a + gamma_d g - beta_u eps_iu - beta_d eps_id

so consumption growth, the cross-sectional mean, equals
``gamma_u a + gamma_d g - beta_u W_u - beta_d W_d`` with ``W_q`` the share of
firms hit in direction ``q``. The upstream direction uses ``w_up`` and the
technology circle, the downstream direction ``w_down`` and the product
circle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.signal import lfilter
from scipy.special import expit

from ._parallel import as_rng, ordered_map, task_rng
from .errors import ShapeMismatch, ValidationError
from .io_tables import IoNetwork, _direction, leontief
from .latent_circle import LatentCircleState, angle_gap, stationary_state

DIRECTIONS = ("u", "d")


def _q(direction: str) -> str:
    return "u" if _direction(direction) == "up" else "d"


def _weights(net, direction: str) -> np.ndarray:
    if isinstance(net, IoNetwork):
        return net.matrix(direction)
    W = np.asarray(net, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeMismatch("weight matrix must be square")
    return W


# ---------------------------------------------------------------- graph bounds


@dataclass(frozen=True)
class GraphBounds:
    max_degree: int
    max_dependency: int
    n: int

    @property
    def degree_ratio(self) -> float:
        return self.max_degree / self.n**2 if self.n else 0.0

    @property
    def dependency_ratio(self) -> float:
        return self.max_dependency / self.n if self.n else 0.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(degree_ratio=self.degree_ratio, dependency_ratio=self.dependency_ratio)
        return d


def graph_bounds(net, direction: str = "up") -> GraphBounds:
    """Maximal unweighted in-degree and maximal dependency of the graph.

    ``max_degree = max_i #{j : w_ji > 0}`` and
    ``max_dependency = max_{i != j} #{k : w_ki > 0, w_kj > 0}``.
    """
    # float counts are exact well past any realistic n and use BLAS
    A = (_weights(net, direction) > 0).astype(float)
    n = A.shape[0]
    if n == 0:
        return GraphBounds(0, 0, 0)
    D = int(A.sum(axis=0).max())
    C = A.T @ A
    np.fill_diagonal(C, 0)
    return GraphBounds(max_degree=D, max_dependency=int(round(C.max())), n=n)


# ---------------------------------------------------------------- propensities


@dataclass(frozen=True)
class FirmShockParams:
    """Per-firm sigmoid steepness ``k`` and midpoint ``x`` for both directions."""

    k_u: np.ndarray
    x_u: np.ndarray
    k_d: np.ndarray
    x_d: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(getattr(self, f), dtype=float)) for f in ("k_u", "x_u", "k_d", "x_d")]
        if len({a.size for a in arrs}) != 1:
            raise ShapeMismatch("all parameter vectors must have one entry per firm")
        if np.any(arrs[0] < 0) or np.any(arrs[2] < 0):
            raise ValidationError("steepness k must be nonnegative")
        for name, a in zip(("k_u", "x_u", "k_d", "x_d"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, n: int, k: float = 1.0, x: float = 0.0) -> "FirmShockParams":
        return cls(np.full(n, k), np.full(n, x), np.full(n, k), np.full(n, x))

    @property
    def n(self) -> int:
        return self.k_u.size

    def direction(self, q: str) -> tuple[np.ndarray, np.ndarray]:
        return (self.k_u, self.x_u) if _q(q) == "u" else (self.k_d, self.x_d)


def propensity(s, k, x) -> np.ndarray:
    """``1 / (1 + exp(k (s - x)))``, decreasing in ``s``."""
    s = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValidationError("substitutability must be finite")
    return expit(-np.asarray(k, dtype=float) * (s - np.asarray(x, dtype=float)))


class PairTerms:
    """Sparse list of ordered partner pairs ``(i, j, k)`` with ``w_ij w_ik > 0``.

    Built once per weight matrix; evaluating substitutability then touches
    only the pairs that matter, which keeps large sparse networks cheap.
    """

    def __init__(self, W: np.ndarray):
        W = np.asarray(W, dtype=float)
        self.n = W.shape[0]
        rows, js, ks, ws = [], [], [], []
        for i in range(self.n):
            nz = np.flatnonzero(W[i] > 0)
            if nz.size < 2:
                continue
            a, b = np.meshgrid(nz, nz, indexing="ij")
            keep = a != b
            a, b = a[keep], b[keep]
            rows.append(np.full(a.size, i))
            js.append(a)
            ks.append(b)
            ws.append(W[i, a] * W[i, b])
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt)) if rows else (lambda xs, dt: np.zeros(0, dt))
        self.row = cat(rows, np.int64)
        self.j = cat(js, np.int64)
        self.k = cat(ks, np.int64)
        self.w = cat(ws, float)

    def inner_from_distances(self, D: np.ndarray) -> np.ndarray:
        return np.bincount(self.row, self.w * D[self.j, self.k], minlength=self.n)

    def inner_from_angles(self, theta: np.ndarray, mode: str) -> np.ndarray:
        """Pair sums for one angle vector or a ``(periods, n)`` block."""
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            d = angle_gap(theta[self.j], theta[self.k], mode)
            return np.bincount(self.row, self.w * d, minlength=self.n)
        m = theta.shape[0]
        d = angle_gap(theta[:, self.j], theta[:, self.k], mode) * self.w
        # offset rows per period so a single bincount covers the block
        idx = (np.arange(m)[:, None] * self.n + self.row[None, :]).ravel()
        return np.bincount(idx, d.ravel(), minlength=m * self.n).reshape(m, self.n)


def _finish_substitutability(inner: np.ndarray, mode: str, floor: float) -> tuple[np.ndarray, np.ndarray]:
    if mode == "linear":
        return inner, np.zeros(inner.size, dtype=bool)
    if mode != "log":
        raise ValidationError(f"mode must be 'log' or 'linear', got {mode!r}")
    empty = ~(inner > 0)
    s = np.full(inner.size, float(floor))
    s[~empty] = np.log(inner[~empty])
    return s, empty


def substitutability(
    net,
    distances,
    direction: str = "up",
    *,
    floor: float = 0.0,
    mode: str = "log",
) -> tuple[np.ndarray, np.ndarray]:
    """Network substitutability per unit.

    Parameters
    ----------
    distances : (n, n) array
        Symmetric normalized distances in ``[0, 1]``.
    floor : float
        Value assigned where the pair sum is empty or zero (fewer than two
        partners, or all partner distances zero). The default 0 makes the
        propensity ``1 / (1 + exp(-k x))``.
    mode : {"log", "linear"}

    Returns
    -------
    s : ndarray
    empty : bool ndarray
        Units that received the floor value.
    """
    W = _weights(net, direction)
    D = np.asarray(distances, dtype=float)
    if D.shape != W.shape:
        raise ShapeMismatch("distances must match the network size")
    if np.abs(D - D.T).max(initial=0.0) > 1e-12 or D.min(initial=0.0) < 0 or D.max(initial=0.0) > 1:
        raise ValidationError("distances must be symmetric and lie in [0, 1]")
    return _finish_substitutability(PairTerms(W).inner_from_distances(D), mode, floor)


# ---------------------------------------------------------------- economy


@dataclass(frozen=True)
class EconomyConfig:
    gamma_u: float = 1.0
    gamma_d: float = 1.0
    beta_u: float = 0.5
    beta_d: float = 0.5
    sigma_a: float = 0.02
    sigma_g: float = 0.02
    beta_discount: float = 0.96
    gamma_risk: float = 10.0

    def __post_init__(self):
        for name in ("gamma_u", "gamma_d", "beta_u", "beta_d", "sigma_a", "sigma_g", "gamma_risk"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not 0 < self.beta_discount <= 1:
            raise ValidationError("beta_discount must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "EconomyConfig":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: float(v) for k, v in d.items() if k in names})


@dataclass
class SimulationResult:
    """Simulated path.

    Panels (``eps_*``, ``p_*``, ``s_*``, ``firm_growth``) are ``firm x time``
    and are ``None`` when the simulation ran with ``store_panels=False``.
    Series have length ``T``; ``mu_q`` is the cross-sectional mean propensity
    and ``cvar_q = sum_i p(1-p) / n^2`` the conditional variance of ``W_q``.
    """

    a: np.ndarray
    g: np.ndarray
    w_u: np.ndarray
    w_d: np.ndarray
    mu_u: np.ndarray
    mu_d: np.ndarray
    cvar_u: np.ndarray
    cvar_d: np.ndarray
    consumption_growth: np.ndarray
    sdf: np.ndarray
    config: EconomyConfig
    n: int
    eps_u: np.ndarray | None = None
    eps_d: np.ndarray | None = None
    p_u: np.ndarray | None = None
    p_d: np.ndarray | None = None
    s_u: np.ndarray | None = None
    s_d: np.ndarray | None = None
    firm_growth: np.ndarray | None = None
    flags: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.w_u.size

    def identity_gap(self) -> float:
        """Largest deviation of consumption growth from its factor form."""
        c = self.config
        implied = c.gamma_u * self.a + c.gamma_d * self.g - c.beta_u * self.w_u - c.beta_d * self.w_d
        return float(np.max(np.abs(self.consumption_growth - implied), initial=0.0))

    def factors(self) -> dict[str, np.ndarray]:
        return {"a": self.a, "g": self.g, "w_u": self.w_u, "w_d": self.w_d}


def log_sdf(consumption_growth, config: EconomyConfig | None = None, *, beta: float | None = None, gamma: float | None = None) -> np.ndarray:
    """``log beta - gamma * dc``."""
    if config is not None:
        beta = config.beta_discount if beta is None else beta
        gamma = config.gamma_risk if gamma is None else gamma
    if beta is None or gamma is None:
        raise ValidationError("need a config or explicit beta and gamma")
    dc = np.asarray(consumption_growth, dtype=float)
    if not np.all(np.isfinite(dc)):
        raise ValidationError("consumption growth must be finite")
    return np.log(beta) - gamma * dc


def _forced(value, n: int) -> np.ndarray | None:
    if value is None:
        return None
    p = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if np.any((p < 0) | (p > 1)):
        raise ValidationError("forced propensities must lie in [0, 1]")
    return p


def simulate_economy(
    net: IoNetwork,
    states: tuple[LatentCircleState, LatentCircleState],
    params: FirmShockParams,
    config: EconomyConfig,
    T: int,
    seed,
    *,
    distance_mode: str = "wrapped",
    floor: float = 0.0,
    force_p: dict | float | None = None,
    params_path: Callable[[int], FirmShockParams] | None = None,
    store_panels: bool = True,
) -> SimulationResult:
    """Simulate ``T`` periods of the economy.

    Parameters
    ----------
    states : (product, technology) circle states
        Initial latent positions; each advances one AR(1) step per period
        before substitutability is computed.
    force_p : float or {"u": ..., "d": ...}, optional
        Replace model propensities with fixed values.
    params_path : callable, optional
        ``t -> FirmShockParams`` override for time-varying parameters.
    store_panels : bool
        Keep the firm x time panels; turn off for long, wide runs where only
        the aggregate series are needed.
    seed : int or Generator
        The same seed reproduces the path exactly.
    """
    if T < 1:
        raise ValidationError("T must be at least 1")
    n = net.n
    product, technology = states
    if product.n != n or technology.n != n or params.n != n:
        raise ShapeMismatch("latent states and parameters must cover every firm")
    rng = task_rng(seed) if isinstance(seed, (int, np.integer)) else as_rng(seed)
    if not isinstance(force_p, dict):
        force_p = {"u": force_p, "d": force_p}
    forced = {q: _forced(force_p.get(q), n) for q in DIRECTIONS}
    pairs = {"u": PairTerms(net.w_up), "d": PairTerms(net.w_down)}

    def panel(dtype=float):
        return {q: np.zeros((n, T), dtype=dtype) for q in DIRECTIONS} if store_panels else None

    eps, p, s = panel(np.int8), panel(), panel()
    growth = np.zeros((n, T)) if store_panels else None
    series = {name: np.zeros(T) for name in ("a", "g", "w_u", "w_d", "mu_u", "mu_d", "cvar_u", "cvar_d", "dc")}
    floored = {q: 0 for q in DIRECTIONS}
    theta = {"d": product.theta.copy(), "u": technology.theta.copy()}
    circle = {"d": product, "u": technology}
    # periods are processed in blocks; the block length depends only on the
    # network so the draw order is fixed by the inputs
    width = max(pairs["u"].w.size, pairs["d"].w.size, n, 1)
    block = int(max(1, min(256, 2_000_000 // width)))

    for t0 in range(0, T, block):
        m = min(block, T - t0)
        sl = slice(t0, t0 + m)
        p_b, e_b = {}, {}
        for q in ("d", "u"):
            st = circle[q]
            shocks = st.sigma_theta * rng.standard_normal((m, n))
            path = lfilter([1.0], [1.0, -st.rho], shocks, axis=0, zi=st.rho * theta[q][None, :])[0]
            theta[q] = path[-1].copy()
            if forced[q] is None or store_panels:
                inner = pairs[q].inner_from_angles(path, distance_mode)
                s_q, empty = _finish_substitutability(inner.ravel(), "log", floor)
                s_q = s_q.reshape(m, n)
                floored[q] += int(empty.sum())
            if forced[q] is not None:
                p_q = np.broadcast_to(forced[q], (m, n))
            elif params_path is None:
                k, x = params.direction(q)
                p_q = propensity(s_q, k[None, :], x[None, :])
            else:
                kx = [params_path(t).direction(q) for t in range(t0, t0 + m)]
                p_q = propensity(s_q, np.array([v[0] for v in kx]), np.array([v[1] for v in kx]))
            p_b[q] = p_q
            if store_panels:
                s[q][:, sl] = s_q.T
                p[q][:, sl] = p_q.T
        for q in DIRECTIONS:
            e_b[q] = (rng.random((m, n)) < p_b[q]).astype(np.int8)
            series[f"w_{q}"][sl] = e_b[q].mean(axis=1)
            series[f"mu_{q}"][sl] = p_b[q].mean(axis=1)
            series[f"cvar_{q}"][sl] = np.sum(p_b[q] * (1.0 - p_b[q]), axis=1) / n**2
            if store_panels:
                eps[q][:, sl] = e_b[q].T
        a_b = config.sigma_a * rng.standard_normal(m)
        g_b = config.sigma_g * rng.standard_normal(m)
        y_b = (
            config.gamma_u * a_b[:, None]
            + config.gamma_d * g_b[:, None]
            - config.beta_u * e_b["u"]
            - config.beta_d * e_b["d"]
        )
        series["a"][sl], series["g"][sl], series["dc"][sl] = a_b, g_b, y_b.mean(axis=1)
        if store_panels:
            growth[:, sl] = y_b.T

    dc = series["dc"]
    return SimulationResult(
        a=series["a"],
        g=series["g"],
        w_u=series["w_u"],
        w_d=series["w_d"],
        mu_u=series["mu_u"],
        mu_d=series["mu_d"],
        cvar_u=series["cvar_u"],
        cvar_d=series["cvar_d"],
        consumption_growth=dc,
        sdf=log_sdf(dc, config),
        config=config,
        n=n,
        eps_u=eps["u"] if store_panels else None,
        eps_d=eps["d"] if store_panels else None,
        p_u=p["u"] if store_panels else None,
        p_d=p["d"] if store_panels else None,
        s_u=s["u"] if store_panels else None,
        s_d=s["d"] if store_panels else None,
        firm_growth=growth,
        flags={"floored_u": floored["u"], "floored_d": floored["d"], "distance_mode": distance_mode, "floor": floor},
    )


# ---------------------------------------------------------------- synthetic inputs


def synthetic_network(n: int, partners: int = 4, weight: float = 0.5, seed=None) -> IoNetwork:
    """Sparse random network; every row has ``partners`` suppliers summing to ``weight``."""
    rng = as_rng(seed)
    partners = min(partners, n - 1)
    mats = []
    for _ in range(2):
        W = np.zeros((n, n))
        for i in range(n):
            others = np.delete(np.arange(n), i)
            cols = rng.choice(others, size=partners, replace=False) if partners > 0 else []
            w = rng.uniform(0.5, 1.5, len(cols))
            W[i, cols] = weight * w / w.sum() if len(cols) else 0.0
        mats.append(W)
    return IoNetwork(mats[0], mats[1], labels=tuple(f"f{i}" for i in range(n)))


def default_states(n: int, seed=None, *, rho: float = 0.9, sigma_theta: float = 0.5) -> tuple[LatentCircleState, LatentCircleState]:
    rng = as_rng(seed)
    return (
        stationary_state(n, rho, sigma_theta, rng, space="product"),
        stationary_state(n, rho, sigma_theta, rng, space="technology"),
    )


# ---------------------------------------------------------------- diagnostics


@dataclass
class DirectionDiagnostics:
    n: int
    periods: int
    ks_stat: float
    ks_pvalue: float
    ks_stat_corrected: float
    ks_pvalue_corrected: float
    max_dependency: int
    chebyshev: dict[str, dict]
    variance_ratio: float
    variance_bound: float
    variance_bound_holds: bool


@dataclass
class DiagnosticsReport:
    directions: dict[str, DirectionDiagnostics]
    identity_gap: float

    def as_dict(self) -> dict:
        return {"identity_gap": self.identity_gap, "directions": {q: asdict(d) for q, d in self.directions.items()}}


def _direction_diagnostics(
    W: np.ndarray, mu: np.ndarray, var: np.ndarray, n: int, mbar: int, ks: Sequence[float], rng: np.random.Generator
) -> DirectionDiagnostics:
    T = W.size
    ok = var > 0
    z = (W[ok] - mu[ok]) / np.sqrt(var[ok])
    raw = stats.kstest(z, "norm") if z.size else None
    # jittered continuity correction for the lattice n*W
    u = rng.random(int(ok.sum()))
    zc = (n * W[ok] + u - 0.5 - n * mu[ok]) / np.sqrt(n**2 * var[ok] + 1.0 / 12.0)
    cor = stats.kstest(zc, "norm") if zc.size else None

    dev = np.abs(W - mu)
    cheb = {}
    for k in ks:
        bound = 1.0 / k**2
        stated = 2.0 * k * mbar / n
        corrected = k * np.sqrt(2.0 * mbar / n)
        freq = float(np.mean(dev >= stated))
        se = float(np.sqrt(min(bound, 1.0) * max(1.0 - bound, 0.0) / T))
        cheb[str(k)] = {
            "threshold": stated,
            "frequency": freq,
            "bound": bound,
            "binomial_se": se,
            "holds": bool(freq <= bound + 2 * se),
            "threshold_sd_scaled": corrected,
            "frequency_sd_scaled": float(np.mean(dev >= corrected)),
        }
    emp_var = float(np.mean((W - mu) ** 2))
    vb = 2.0 * mbar / n
    nan = float("nan")
    return DirectionDiagnostics(
        n=n,
        periods=int(T),
        ks_stat=float(raw.statistic) if raw else nan,
        ks_pvalue=float(raw.pvalue) if raw else nan,
        ks_stat_corrected=float(cor.statistic) if cor else nan,
        ks_pvalue_corrected=float(cor.pvalue) if cor else nan,
        max_dependency=int(mbar),
        chebyshev=cheb,
        variance_ratio=emp_var / vb if vb > 0 else nan,
        variance_bound=vb,
        variance_bound_holds=bool(emp_var <= vb),
    )


def diagnostics(
    result: SimulationResult,
    bounds: dict[str, GraphBounds],
    *,
    ks: Sequence[float] = (1, 2, 4),
    seed: int = 0,
) -> DiagnosticsReport:
    """Normal-approximation and concentration checks of the propagation factors.

    For each direction the factor is standardized by its conditional mean
    ``mean(p_t)`` and standard deviation ``sqrt(sum p(1-p)) / n`` and compared
    with N(0, 1) by Kolmogorov-Smirnov, both raw and with a jittered
    continuity correction for the lattice ``n W``. Tail frequencies of
    ``|W - mean(p)|`` are reported against ``1/k^2`` at the threshold
    ``2 k M / n`` and at the standard-deviation scaled ``k sqrt(2 M / n)``.
    """
    rng = task_rng(seed, 0xD1A6)
    dirs = {}
    for q in DIRECTIONS:
        W, mu, var = (getattr(result, f"{name}_{q}") for name in ("w", "mu", "cvar"))
        dirs[q] = _direction_diagnostics(W, mu, var, result.n, bounds[q].max_dependency, ks, rng)
    return DiagnosticsReport(directions=dirs, identity_gap=result.identity_gap())


def diagnostic_sweep(
    ns: Sequence[int] = (10, 100, 1000),
    seeds: Sequence[int] = tuple(range(20)),
    T: int = 2000,
    *,
    partners: int = 4,
    k: float = 1.0,
    x: float = -3.0,
    config: EconomyConfig | None = None,
    force_p: float | None = None,
    threads: int | None = None,
) -> list[dict]:
    """Run :func:`diagnostics` over network sizes and seeds.

    Each (n, seed) task draws its own sparse network, latent states and shock
    path from ``task_rng(seed, n)``. ``force_p`` pins every propensity (the
    independent-firm benchmark). Returns one summary row per ``n`` with seed
    averages.
    """
    config = config or EconomyConfig()

    def run(task):
        n, sd = task
        rng = task_rng(sd, n)
        net = synthetic_network(n, partners, seed=rng)
        states = default_states(n, rng)
        res = simulate_economy(
            net, states, FirmShockParams.uniform(n, k, x), config, T, rng, force_p=force_p, store_panels=False
        )
        bounds = {"u": graph_bounds(net, "up"), "d": graph_bounds(net, "down")}
        rep = diagnostics(res, bounds, seed=sd)
        return n, rep

    tasks = [(n, sd) for n in ns for sd in seeds]
    out = ordered_map(run, tasks, threads)
    rows = []
    for n in ns:
        reps = [r for m, r in out if m == n]
        row = {"n": n, "seeds": len(reps), "identity_gap": max(r.identity_gap for r in reps)}
        for q in DIRECTIONS:
            ds = [r.directions[q] for r in reps]
            row[f"ks_{q}"] = float(np.mean([d.ks_stat for d in ds]))
            row[f"ks_p_{q}"] = float(np.mean([d.ks_pvalue for d in ds]))
            row[f"ks_corrected_{q}"] = float(np.mean([d.ks_stat_corrected for d in ds]))
            row[f"ks_p_corrected_{q}"] = float(np.mean([d.ks_pvalue_corrected for d in ds]))
            row[f"mbar_{q}"] = int(max(d.max_dependency for d in ds))
            c2 = [d.chebyshev["2"] for d in ds]
            row[f"tail_k2_{q}"] = float(np.mean([c["frequency"] for c in c2]))
            row[f"tail_k2_se_{q}"] = float(np.sqrt(0.25 * 0.75 / (T * len(ds))))
            row[f"tail_k2_sd_scaled_{q}"] = float(np.mean([c["frequency_sd_scaled"] for c in c2]))
            row[f"variance_ratio_{q}"] = float(np.mean([d.variance_ratio for d in ds]))
        rows.append(row)
    return rows


# ---------------------------------------------------------------- GE response


def ge_response(
    net,
    dz,
    dG=None,
    prices=None,
    outputs=None,
    betas=None,
    *,
    eps: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """First-order output responses to productivity and demand shocks.

    ``dlogy_down = (I - W)^-1 dz`` and ``dlogy_up = (I - W')^-1 L dG`` where
    ``L[i, i] = (1 - b_i/2) / (p_i y_i)`` and ``L[i, j] = -(b_i/2) / (p_i y_i)``.

    ``W[i, j]`` is unit i's input share from supplier j; for an
    :class:`IoNetwork` that is the downstream matrix.
    """
    W = net.w_down if isinstance(net, IoNetwork) else np.asarray(net, dtype=float)
    n = W.shape[0]
    dz = np.asarray(dz, dtype=float).ravel()
    if dz.size != n:
        raise ShapeMismatch("dz must have one entry per unit")
    down = leontief(W, eps=eps) @ dz
    if dG is None:
        return down, np.zeros(n)
    dG = np.asarray(dG, dtype=float).ravel()
    py = np.ones(n) if prices is None else np.asarray(prices, dtype=float)
    py = py * (np.ones(n) if outputs is None else np.asarray(outputs, dtype=float))
    b = np.zeros(n) if betas is None else np.asarray(betas, dtype=float)
    if np.any(py <= 0):
        raise ValidationError("prices and outputs must be positive")
    L = np.tile((-(b / 2) / py)[:, None], (1, n))
    np.fill_diagonal(L, (1 - b / 2) / py)
    up = leontief(W.T, eps=eps) @ (L @ dG)
    return down, up


# ---------------------------------------------------------------- priced assets


def sdf_priced_returns(
    result: SimulationResult,
    n_assets: int,
    seed=None,
    *,
    exposure_scale: float = 2.0,
    noise_sd: float = 0.05,
) -> tuple[np.ndarray, np.ndarray]:
    """Excess returns priced by the simulated log SDF.

    Factors are ``f = (a, g, W_u, W_d)`` and the log SDF is
    ``log beta - gamma * lam' f`` with ``lam = (gamma_u, gamma_d, -beta_u, -beta_d)``.
    An asset with exposures ``b`` earns the lognormal-approximation premium
    ``gamma * b' Cov(f) lam`` plus ``b'(f_t - mean f)`` and idiosyncratic
    noise. Exposures are uniform on ``[0, exposure_scale]``.

    Returns
    -------
    returns : (n_assets, T) array
    exposures : (n_assets, 4) array
    """
    rng = as_rng(seed)
    c = result.config
    F = np.column_stack([result.a, result.g, result.w_u, result.w_d])
    lam = np.array([c.gamma_u, c.gamma_d, -c.beta_u, -c.beta_d])
    cov = np.cov(F, rowvar=False)
    B = rng.uniform(0.0, exposure_scale, (n_assets, 4))
    premium = c.gamma_risk * B @ cov @ lam
    R = premium[:, None] + B @ (F - F.mean(axis=0)).T + noise_sd * rng.standard_normal((n_assets, F.shape[0]))
    return R, B
