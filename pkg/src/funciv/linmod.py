"""Least-squares machinery used by every estimator.

All fits go through a column-pivoted QR factorisation. A design whose
numerical rank falls short of its column count raises
:class:`~funciv.errors.RankDeficientError` instead of silently returning a
minimum-norm solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import (
    AsymmetricInputError,
    DimensionError,
    InsufficientDataError,
    RankDeficientError,
    UnderdeterminedError,
)

__all__ = [
    "RANK_TOL",
    "RegressionFit",
    "cross_covariance",
    "multiresponse_ols",
    "nearest_psd",
    "ols_fit",
]

RANK_TOL = 1e-10


@dataclass(frozen=True)
class RegressionFit:
    coefficients: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    rss: float


def _check_design(design: np.ndarray, n_rows: int) -> np.ndarray:
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError(f"design must be 2-D, got shape {X.shape}")
    if X.shape[0] != n_rows:
        raise DimensionError(f"design has {X.shape[0]} rows, response has {n_rows}")
    n, p = X.shape
    if n <= p:
        raise UnderdeterminedError(f"{n} observations cannot identify {p} coefficients")
    return X


def _qr_solve(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients for every column of ``Y`` (p x q)."""
    Q, R, piv = sla.qr(X, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
    p = X.shape[1]
    if rank < p:
        raise RankDeficientError(
            f"design has numerical rank {rank} but {p} columns "
            f"({p - rank} column(s) linearly dependent at tolerance {RANK_TOL:g})",
            rank=rank,
            n_columns=p,
        )
    sol = sla.solve_triangular(R, Q.T @ Y, check_finite=False)
    coef = np.empty_like(sol)
    coef[piv] = sol
    return coef


def ols_fit(design, response, weights=None) -> RegressionFit:
    """(Weighted) least squares of ``response`` on the columns of ``design``.

    Parameters
    ----------
    design : (n, p) array_like
        Regressors; include a column of ones for an intercept.
    response : (n,) array_like
    weights : (n,) array_like, optional
        Strictly positive observation weights. ``rss`` is the weighted sum
        of squared residuals.

    Returns
    -------
    RegressionFit
    """
    y = np.asarray(response, dtype=float).ravel()
    X = _check_design(design, y.size)
    if weights is None:
        coef = _qr_solve(X, y[:, None])[:, 0]
        fitted = X @ coef
        resid = y - fitted
        return RegressionFit(coef, fitted, resid, float(resid @ resid))
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != y.size:
        raise DimensionError(f"{w.size} weights for {y.size} observations")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    sw = np.sqrt(w)
    coef = _qr_solve(X * sw[:, None], (y * sw)[:, None])[:, 0]
    fitted = X @ coef
    resid = y - fitted
    return RegressionFit(coef, fitted, resid, float(np.sum(w * resid**2)))


def multiresponse_ols(design, responses, weights=None) -> np.ndarray:
    """Coefficients (p x q) of one least-squares fit per response column.

    A single factorisation of ``design`` is shared by all columns.
    """
    Y = np.asarray(responses, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] < 1:
        raise DimensionError("need at least one response column")
    X = _check_design(design, Y.shape[0])
    if weights is None:
        return _qr_solve(X, Y)
    sw = np.sqrt(np.asarray(weights, dtype=float).ravel())
    if sw.size != Y.shape[0]:
        raise DimensionError(f"{sw.size} weights for {Y.shape[0]} observations")
    return _qr_solve(X * sw[:, None], Y * sw[:, None])


def cross_covariance(A, B, weights=None) -> np.ndarray:
    """Sample cross-covariance with the ``n - 1`` denominator.

    With ``weights`` the reliability-weighted analogue is used
    (denominator ``V1 - V2 / V1``), which reduces to ``n - 1`` for equal
    weights.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = A[:, None] if A.ndim == 1 else A
    B = B[:, None] if B.ndim == 1 else B
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    n = A.shape[0]
    if n < 2:
        raise InsufficientDataError(f"covariance needs at least 2 rows, got {n}")
    if weights is None:
        Ac = A - A.mean(axis=0)
        Bc = B - B.mean(axis=0)
        return Ac.T @ Bc / (n - 1)
    w = np.asarray(weights, dtype=float).ravel()
    v1 = w.sum()
    Ac = A - (w @ A) / v1
    Bc = B - (w @ B) / v1
    return (Ac * w[:, None]).T @ Bc / (v1 - (w @ w) / v1)


def nearest_psd(S, tol: float = 1e-8) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix to a symmetric ``S``.

    Negative eigenvalues are clamped to zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if asym > tol * scale:
        raise AsymmetricInputError(f"matrix asymmetry {asym:.3g} exceeds tolerance {tol:g}")
    S = (S + S.T) / 2.0
    vals, vecs = np.linalg.eigh(S)
    if vals.size and vals[0] >= 0:
        return S
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.T
    return (out + out.T) / 2.0
