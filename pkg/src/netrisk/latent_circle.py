"""Latent positions on a circle and the moments they induce.

Each unit has an angle following a Gaussian AR(1),
``theta' = rho * theta + eps`` with ``eps ~ N(0, sigma_theta^2)``. Pairwise
distances are angle gaps normalized by ``2 pi``. In the stationary state the
raw gap of two independent units is ``N(0, 2 sigma_theta^2 / (1 - rho^2))``,
so its absolute value is half-normal with variance
``(2 - 4/pi) sigma_theta^2 / (1 - rho^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from ._parallel import as_rng
from .errors import ValidationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class LatentCircleState:
    theta: np.ndarray
    rho: float
    sigma_theta: float
    space: str = "product"

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)):
            raise ValidationError("angles must be finite")
        if not self.sigma_theta > 0:
            raise ValidationError("sigma_theta must be positive")
        if not abs(self.rho) < 1:
            raise ValidationError("|rho| must be below 1")
        if self.space not in ("product", "technology"):
            raise ValidationError("space must be 'product' or 'technology'")
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.theta.size

    @property
    def stationary_var(self) -> float:
        return self.sigma_theta**2 / (1.0 - self.rho**2)


@dataclass(frozen=True)
class DistanceMoments:
    sigma_d2: float
    mean_abs_gap: float
    scaled: bool = True


def stationary_state(
    n: int, rho: float, sigma_theta: float, seed=None, *, space: str = "product"
) -> LatentCircleState:
    """Angles drawn from the stationary law ``N(0, sigma_theta^2 / (1 - rho^2))``."""
    st = LatentCircleState(np.zeros(n), rho, sigma_theta, space)
    theta = np.sqrt(st.stationary_var) * as_rng(seed).standard_normal(n)
    return replace(st, theta=theta)


def step_angles(state: LatentCircleState, seed=None) -> LatentCircleState:
    """One AR(1) step; ``seed`` may be an int or a Generator."""
    rng = as_rng(seed)
    eps = state.sigma_theta * rng.standard_normal(state.n)
    return replace(state, theta=state.rho * state.theta + eps)


def simulate_angles(state: LatentCircleState, T: int, seed=None) -> np.ndarray:
    """``(T + 1, n)`` path starting at ``state.theta``."""
    rng = as_rng(seed)
    out = np.empty((T + 1, state.n))
    out[0] = state.theta
    eps = state.sigma_theta * rng.standard_normal((T, state.n))
    for t in range(T):
        out[t + 1] = state.rho * out[t] + eps[t]
    return out


def angle_gap(a, b, mode: str = "unwrapped"):
    """Normalized distance between angles ``a`` and ``b`` (broadcasting)."""
    gap = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    if mode == "unwrapped":
        return gap / TWO_PI
    if mode == "wrapped":
        gap = np.mod(gap, TWO_PI)
        return np.minimum(gap, TWO_PI - gap) / TWO_PI
    raise ValidationError(f"mode must be 'unwrapped' or 'wrapped', got {mode!r}")


def pairwise_distance(state, mode: str = "unwrapped") -> np.ndarray:
    """``n x n`` matrix of normalized angle gaps.

    ``unwrapped`` uses ``|theta_i - theta_j| / (2 pi)`` on the raw angles;
    ``wrapped`` uses the shorter arc, so values lie in ``[0, 0.5]``.
    """
    theta = state.theta if isinstance(state, LatentCircleState) else np.asarray(state, dtype=float)
    D = angle_gap(theta[:, None], theta[None, :], mode)
    np.fill_diagonal(D, 0.0)
    return D


def distance_moments(rho: float, sigma_theta: float, *, scaled: bool = True) -> DistanceMoments:
    """Variance and mean of the stationary pairwise distance.

    With ``scaled`` (default) the moments refer to ``|gap| / (2 pi)``;
    otherwise to the raw gap ``|theta_i - theta_j|`` in radians.
    """
    if not sigma_theta > 0 or not abs(rho) < 1:
        raise ValidationError("need sigma_theta > 0 and |rho| < 1")
    v = sigma_theta**2 / (1.0 - rho**2)
    var = (2.0 - 4.0 / np.pi) * v
    mean = 2.0 * np.sqrt(v / np.pi)
    if scaled:
        var /= TWO_PI**2
        mean /= TWO_PI
    return DistanceMoments(sigma_d2=float(var), mean_abs_gap=float(mean), scaled=scaled)


def _pair_products(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit products ``w_ij w_ik`` over unordered partner pairs ``j < k``.

    Returns the ``(n, P)`` product matrix and the ``(P, 2)`` pair list.
    """
    n = weights.shape[1]
    j, k = np.triu_indices(n, k=1)
    return weights[:, j] * weights[:, k], np.column_stack([j, k])


def substitutability_moments(
    weights, sigma_d2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance of the linear substitutability score.

    ``mu_i = -sigma_d sqrt(8/pi) sum_{j<k} w_ij w_ik`` and
    ``Var(s_i) = 4 sigma_d^2 sum_{j<k} (w_ij w_ik)^2``. Off-diagonal
    covariances treat two distances as perfectly correlated whenever their
    index pairs share an endpoint, and uncorrelated otherwise. That rule is
    exact for identical and disjoint pairs and a simplification for pairs
    sharing one endpoint.
    """
    W = np.asarray(weights, dtype=float)
    if W.ndim != 2 or np.any(W < 0):
        raise ValidationError("weights must be a nonnegative matrix")
    if not sigma_d2 > 0:
        raise ValidationError("sigma_d2 must be positive")
    n = W.shape[0]
    sd = np.sqrt(sigma_d2)
    if W.shape[1] < 2:
        return np.zeros(n), np.zeros((n, n))
    A, pairs = _pair_products(W)
    mu = -sd * np.sqrt(8.0 / np.pi) * A.sum(axis=1)
    E = np.zeros((pairs.shape[0], W.shape[1]))
    rows = np.arange(pairs.shape[0])
    E[rows, pairs[:, 0]] = 1.0
    E[rows, pairs[:, 1]] = 1.0
    overlap = (E @ E.T > 0).astype(float)
    cov = 4.0 * sigma_d2 * (A @ overlap @ A.T)
    np.fill_diagonal(cov, 4.0 * sigma_d2 * (A**2).sum(axis=1))
    return mu, cov


@dataclass(frozen=True)
class PropensityStats:
    median: np.ndarray
    logodds_mean: np.ndarray
    logodds_cov: np.ndarray


def centering_matrix(k) -> np.ndarray:
    """``diag(k) (I - 1 1' / n)``."""
    k = np.asarray(k, dtype=float).ravel()
    n = k.size
    return k[:, None] * (np.eye(n) - np.full((n, n), 1.0 / n))


def propensity_stats(mu, cov, k) -> PropensityStats:
    """Median and log-odds moments of logistic-normal propensities.

    The log-odds ``B s`` with ``B = diag(k)(I - 1 1'/n)`` are Gaussian, so the
    propensities have median ``expit(B mu)``. Their mean and variance have no
    closed form; see :func:`propensity_monte_carlo`.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float)
    B = centering_matrix(k)
    if B.shape[0] != mu.size or cov.shape != (mu.size, mu.size):
        raise ValidationError("mu, cov and k must agree in size")
    m = B @ mu
    return PropensityStats(median=expit(m), logodds_mean=m, logodds_cov=B @ cov @ B.T)


def propensity_monte_carlo(
    mu, cov, k, n_draws: int = 100_000, seed=None
) -> dict[str, np.ndarray]:
    """Simulated mean and variance of ``expit(B s)`` with ``s ~ N(mu, cov)``."""
    st = propensity_stats(mu, cov, k)
    rng = as_rng(seed)
    vals, vecs = np.linalg.eigh(0.5 * (st.logodds_cov + st.logodds_cov.T))
    root = vecs * np.sqrt(np.clip(vals, 0, None))
    z = rng.standard_normal((n_draws, vals.size))
    p = expit(st.logodds_mean + z @ root.T)
    return {"mean": p.mean(axis=0), "var": p.var(axis=0, ddof=1), "n_draws": n_draws, "monte_carlo": True}


def substitutability_linear(weights, distances) -> np.ndarray:
    """``sum_{j != k} w_ij w_ik d_jk`` for every unit ``i``."""
    W = np.asarray(weights, dtype=float)
    D = np.asarray(distances, dtype=float).copy()
    np.fill_diagonal(D, 0.0)
    return np.einsum("ij,jk,ik->i", W, D, W)
