"""Variance decomposition of network-propagated shocks.

For output ``y = H u`` with ``Var(u) = Sigma`` the variance of unit ``i``
splits exactly into

* ``self``: own shock through the diagonal of ``H``;
* ``across``: partners' own variances, ``sum_{j != i} h_ij^2 sigma_j^2``;
* ``between``: cross terms ``h_ij h_ik sigma_jk`` over ``j != k`` with
  positive covariance;
* ``substitutability``: the same cross terms with negative covariance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from ._parallel import ordered_map, task_rng
from .errors import NonPositiveArgument, ShapeMismatch, ValidationError
from .io_tables import LeontiefPair
from .shock_cov import ShockCovariance

COLUMNS = ("unit", "direction", "self", "across", "between", "substitutability", "total")


@dataclass(frozen=True)
class VarianceComponents:
    unit: str
    direction: str
    self: float
    across: float
    between: float
    substitutability: float
    total: float

    @property
    def parts_sum(rec) -> float:
        return rec.self + rec.across + rec.between + rec.substitutability


def _matrix(h, direction: str) -> np.ndarray:
    if isinstance(h, LeontiefPair):
        return h.matrix(direction)
    return np.asarray(h, dtype=float)


def _sigma(sigma) -> np.ndarray:
    if isinstance(sigma, ShockCovariance):
        return sigma.sigma
    S = np.asarray(sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"sigma must be square, got {S.shape}")
    if np.abs(S - S.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(S).max(initial=0.0)):
        raise ValidationError("sigma must be symmetric")
    return S


def component_arrays(H: np.ndarray, S: np.ndarray, *, exclude_self: bool = False) -> dict[str, np.ndarray]:
    """Vectorized decomposition; returns one array per component.

    With ``exclude_self`` the cross terms skip pairs involving unit ``i``
    itself, so the four parts no longer add up to ``total``.
    """
    if H.shape != S.shape or H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ShapeMismatch(f"H {H.shape} and sigma {S.shape} must be equal square matrices")
    var = np.diag(S)
    h_diag = np.diag(H)
    self_ = h_diag**2 * var
    across = (H**2) @ var - self_
    off = S.copy()
    np.fill_diagonal(off, 0.0)
    Hc = H.copy()
    if exclude_self:
        np.fill_diagonal(Hc, 0.0)
    between = np.einsum("ij,jk,ik->i", Hc, np.where(off > 0, off, 0.0), Hc)
    subst = np.einsum("ij,jk,ik->i", Hc, np.where(off < 0, off, 0.0), Hc)
    total = np.einsum("ij,jk,ik->i", H, S, H)
    return {"self": self_, "across": across, "between": between, "substitutability": subst, "total": total}


def decompose_variance(
    h,
    sigma,
    direction: str = "up",
    *,
    labels=None,
    exclude_self: bool = False,
) -> list[VarianceComponents]:
    """Per-unit decomposition of ``e_i' H Sigma H' e_i``.

    Parameters
    ----------
    h : LeontiefPair or (n, n) array
        Propagation operator; ``direction`` selects the matrix from a pair.
    sigma : ShockCovariance or (n, n) array
    exclude_self : bool
        Drop cross terms where ``j == i`` or ``k == i``.
    """
    H = _matrix(h, direction)
    S = _sigma(sigma)
    parts = component_arrays(H, S, exclude_self=exclude_self)
    if labels is None:
        labels = getattr(h, "labels", ()) or getattr(sigma, "labels", ()) or range(H.shape[0])
    labels = [str(x) for x in labels]
    return [
        VarianceComponents(
            unit=labels[i],
            direction=str(direction),
            self=float(parts["self"][i]),
            across=float(parts["across"][i]),
            between=float(parts["between"][i]),
            substitutability=float(parts["substitutability"][i]),
            total=float(parts["total"][i]),
        )
        for i in range(H.shape[0])
    ]


def _drop_pairs(S: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    n = S.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    nz = S[iu, ju] != 0
    drop = nz & (rng.random(iu.size) < frac)
    out = S.copy()
    out[iu[drop], ju[drop]] = 0.0
    out[ju[drop], iu[drop]] = 0.0
    return out


def bootstrap_components(
    h,
    sigma,
    drop_fraction: float = 0.1,
    n_samples: int = 100,
    seed: int = 0,
    *,
    direction: str = "up",
    labels=None,
    exclude_self: bool = False,
    threads: int | None = None,
) -> list[VarianceComponents]:
    """Average decomposition over replicates with randomly zeroed correlations.

    Each nonzero off-diagonal pair of ``sigma`` is dropped independently with
    probability ``drop_fraction`` (both triangles together). Replicate ``r``
    draws from its own generator keyed on ``(seed, r)``, so the result does
    not depend on ``threads``.
    """
    if not 0.0 <= drop_fraction < 1.0:
        raise ValidationError("drop_fraction must lie in [0, 1)")
    if n_samples < 1:
        raise ValidationError("n_samples must be at least 1")
    H = _matrix(h, direction)
    S = _sigma(sigma)
    if drop_fraction == 0.0:
        return decompose_variance(H, S, direction, labels=labels or getattr(h, "labels", None), exclude_self=exclude_self)

    def one(r: int) -> dict[str, np.ndarray]:
        return component_arrays(H, _drop_pairs(S, drop_fraction, task_rng(seed, r)), exclude_self=exclude_self)

    reps = ordered_map(one, range(n_samples), threads)
    mean = {k: np.mean([rep[k] for rep in reps], axis=0) for k in reps[0]}
    if labels is None:
        labels = getattr(h, "labels", ()) or getattr(sigma, "labels", ()) or range(H.shape[0])
    labels = [str(x) for x in labels]
    return [
        VarianceComponents(labels[i], str(direction), *(float(mean[k][i]) for k in COLUMNS[2:]))
        for i in range(H.shape[0])
    ]


def substitutability_score(components, shift: float | None = None, *, net: bool = True) -> tuple[np.ndarray, float]:
    """``-log(between + shift)``; larger means more room to substitute.

    Parameters
    ----------
    components : list of VarianceComponents or array
        Arrays are used as the ``between`` values directly. For component
        records, ``net=True`` uses the full signed cross-term sum
        (``between + substitutability``).
    shift : float, optional
        Defaults to ``1 - min(between)`` so the smallest argument is 1.

    Returns
    -------
    score, shift
    """
    if isinstance(components, (list, tuple)) and components and isinstance(components[0], VarianceComponents):
        b = np.array([c.between + (c.substitutability if net else 0.0) for c in components])
    else:
        b = np.asarray(components, dtype=float).ravel()
    if shift is None:
        shift = 1.0 - float(b.min()) if b.size else 1.0
    arg = b + shift
    if np.any(arg <= 0):
        raise NonPositiveArgument(f"between + shift must be positive (min {arg.min():.6g})")
    return -np.log(arg), float(shift)


def components_frame(components: list[VarianceComponents]) -> pd.DataFrame:
    return pd.DataFrame([asdict(c) for c in components], columns=list(COLUMNS))
