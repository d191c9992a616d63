"""Estimators of the coefficient function in scalar-on-function regression.

The outcome model is

    Y_i = beta0 + sum_k omega_k S_ik + Z_i' gamma + e_i,

where ``S_ik`` are basis scores of a functional covariate. The five
estimators differ only in which scores enter that regression:

* ``Oracle``    scores of the latent curve X (simulation only)
* ``Naive``     scores of the error-prone proxy W
* ``PW2SLS``    scores of W predicted pointwise in t from the instrument M
* ``MULTI2SLS`` W-scores predicted jointly from all M-scores
* ``SIMEX``     naive fits on W with added simulated error, extrapolated
                back to the error-free case
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    DimensionError,
    GridMismatchError,
    InvalidBasisError,
    RankDeficientError,
    RatioDegenerateError,
    WeakInstrumentError,
)
from .fda import (
    BasisSystem,
    FunctionalSample,
    build_bspline_basis,
    project_scores,
    reconstruct_coefficient,
)
from .linmod import cross_covariance, multiresponse_ols, nearest_psd, ols_fit

__all__ = [
    "ESTIMATORS",
    "FitResult",
    "SimexConfig",
    "bic_table",
    "default_lambda_grid",
    "fit_by_name",
    "fit_multi2sls",
    "fit_naive",
    "fit_oracle",
    "fit_pw2sls",
    "fit_simex",
    "select_K_bic",
]

ESTIMATORS = ("Oracle", "MULTI2SLS", "PW2SLS", "SIMEX", "Naive")
DEFAULT_K_RANGE = (5, 9)


@dataclass(frozen=True, eq=False)
class FitResult:
    beta0: float
    omega: np.ndarray
    gamma: np.ndarray
    beta1_curve: np.ndarray
    K: int
    estimator: str
    basis: BasisSystem
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def grid(self):
        return self.basis.grid


def default_lambda_grid(lambda_max: float = 2.0001, step: float = 0.05, start: float = 0.0001):
    """``start, start + step, ...`` up to ``lambda_max`` inclusive."""
    count = int(np.floor((lambda_max - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


@dataclass(frozen=True, eq=False)
class SimexConfig:
    """Simulation-extrapolation settings.

    The default lambda grid is 0.0001, 0.0501, ..., 2.0001 (41 values).
    """

    lambda_grid: np.ndarray = field(default_factory=default_lambda_grid)
    n_sim: int = 50
    extrapolant: str = "quadratic"

    def __post_init__(self):
        lam = np.array(self.lambda_grid, dtype=float).ravel()
        if lam.size < 1 or np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
            raise ValueError("lambda_grid must be strictly increasing and positive")
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")
        if self.extrapolant not in _EXTRAPOLANT_DEGREE:
            raise ValueError(
                f"unknown extrapolant {self.extrapolant!r}; "
                f"choose from {sorted(_EXTRAPOLANT_DEGREE)}"
            )
        if lam.size <= _EXTRAPOLANT_DEGREE[self.extrapolant]:
            raise ValueError("lambda_grid too short for the extrapolant degree")
        lam.setflags(write=False)
        object.__setattr__(self, "lambda_grid", lam)


_EXTRAPOLANT_DEGREE = {"linear": 1, "quadratic": 2}


def _covariates(Z, n: int) -> np.ndarray:
    if Z is None:
        return np.empty((n, 0))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise DimensionError(f"Z has {Z.shape[0]} rows, expected {n}")
    return Z


def _response(Y, n: int) -> np.ndarray:
    y = np.asarray(Y, dtype=float).ravel()
    if y.size != n:
        raise DimensionError(f"Y has {y.size} entries, curves have {n} rows")
    return y


def _outcome_design(scores: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(scores.shape[0]), scores, Z])


def _assemble(coef, basis: BasisSystem, estimator: str, details=None) -> FitResult:
    K = basis.K
    omega = np.array(coef[1 : K + 1])
    return FitResult(
        beta0=float(coef[0]),
        omega=omega,
        gamma=np.array(coef[K + 1 :]),
        beta1_curve=reconstruct_coefficient(omega, basis),
        K=K,
        estimator=estimator,
        basis=basis,
        details=details or {},
    )


def _fit_scores(scores, Y, Z, basis, estimator, weights=None, details=None) -> FitResult:
    fit = ols_fit(_outcome_design(scores, Z), Y, weights)
    return _assemble(fit.coefficients, basis, estimator, details)


def _same_grid(*samples: FunctionalSample):
    first = samples[0]
    for s in samples[1:]:
        if not s.grid.same_as(first.grid):
            raise GridMismatchError("functional covariates must share one grid")
        if s.n != first.n:
            raise DimensionError(f"curve sets have {first.n} and {s.n} subjects")


def bic_value(rss: float, n: int, K: int, p: int, weight_total: float | None = None) -> float:
    """``log(rss / n) + (K + p) log(n) / n``.

    For weighted fits ``rss`` is the weighted sum and is divided by the
    total weight instead of ``n``.
    """
    denom = n if weight_total is None else weight_total
    return float(np.log(rss / denom) + (K + p) * np.log(n) / n)


def bic_table(W: FunctionalSample, Y, Z=None, K_range=DEFAULT_K_RANGE, order: int = 4, weights=None):
    """BIC for every K in ``K_range`` (inclusive), fitted on the W-scores."""
    n = W.n
    y = _response(Y, n)
    Zm = _covariates(Z, n)
    p = Zm.shape[1]
    k_lo, k_hi = int(K_range[0]), int(K_range[1])
    if k_lo > k_hi:
        raise ValueError(f"empty K range {K_range}")
    if k_lo < order or k_hi > n - p - 2:
        raise InvalidBasisError(
            f"K range [{k_lo}, {k_hi}] must lie within [{order}, {n - p - 2}]"
        )
    wt = None if weights is None else float(np.sum(weights))
    table = {}
    for K in range(k_lo, k_hi + 1):
        basis = build_bspline_basis(K, order, W.grid)
        scores = project_scores(W, basis).scores
        try:
            fit = ols_fit(_outcome_design(scores, Zm), y, weights)
        except RankDeficientError as exc:
            raise RankDeficientError(f"K={K}: {exc}", exc.rank, exc.n_columns) from exc
        table[K] = bic_value(fit.rss, n, K, p, wt)
    return table


def select_K_bic(W: FunctionalSample, Y, Z=None, K_range=DEFAULT_K_RANGE, order: int = 4, weights=None) -> int:
    """Number of basis functions minimising BIC on the observed curves.

    Ties go to the smaller K.
    """
    table = bic_table(W, Y, Z, K_range, order, weights)
    return min(table, key=lambda K: (table[K], K))


def fit_naive(W: FunctionalSample, Y, Z, K: int, *, order: int = 4, weights=None) -> FitResult:
    """Regress Y on the basis scores of the proxy curves W, ignoring error."""
    basis = build_bspline_basis(K, order, W.grid)
    return _fit_scores(
        project_scores(W, basis).scores, _response(Y, W.n), _covariates(Z, W.n), basis, "Naive", weights
    )


def fit_oracle(X: FunctionalSample, Y, Z, K: int, *, order: int = 4, weights=None) -> FitResult:
    """Same regression as :func:`fit_naive`, on the true curves X."""
    basis = build_bspline_basis(K, order, X.grid)
    return _fit_scores(
        project_scores(X, basis).scores, _response(Y, X.n), _covariates(Z, X.n), basis, "Oracle", weights
    )


def pointwise_first_stage(W: FunctionalSample, M: FunctionalSample, weights=None) -> FunctionalSample:
    """Fitted values of ``W(t) ~ 1 + M(t)`` computed separately at each grid point."""
    _same_grid(W, M)
    ones = np.ones(W.n)
    fitted = np.empty_like(W.values)
    for l, t in enumerate(W.grid.points):
        try:
            fit = ols_fit(np.column_stack([ones, M.values[:, l]]), W.values[:, l], weights)
        except RankDeficientError as exc:
            raise WeakInstrumentError(
                f"first stage not identified at t={t:.6g} (grid index {l}): instrument is constant"
            ) from exc
        fitted[:, l] = fit.fitted
    return FunctionalSample(fitted, W.grid)


def fit_pw2sls(W: FunctionalSample, M: FunctionalSample, Y, Z, K: int, *, order: int = 4, weights=None) -> FitResult:
    """Pointwise two-stage least squares.

    Stage 1 regresses W(t) on M(t) at every grid point; stage 2 projects the
    fitted curves onto the basis and runs the outcome regression.
    """
    W_hat = pointwise_first_stage(W, M, weights)
    basis = build_bspline_basis(K, order, W.grid)
    return _fit_scores(
        project_scores(W_hat, basis).scores,
        _response(Y, W.n),
        _covariates(Z, W.n),
        basis,
        "PW2SLS",
        weights,
    )


def fit_multi2sls(W: FunctionalSample, M: FunctionalSample, Y, Z, K: int, *, order: int = 4, weights=None) -> FitResult:
    """Multivariate two-stage least squares.

    Each W-score is regressed on the intercept and all K M-scores at once,
    so correlation across time in the instrument is used.
    """
    _same_grid(W, M)
    basis = build_bspline_basis(K, order, W.grid)
    w_scores = project_scores(W, basis).scores
    m_scores = project_scores(M, basis).scores
    first = np.column_stack([np.ones(W.n), m_scores])
    try:
        alpha = multiresponse_ols(first, w_scores, weights)
    except RankDeficientError as exc:
        raise WeakInstrumentError(f"multivariate first stage not identified: {exc}") from exc
    w_hat = first @ alpha
    return _fit_scores(
        w_hat,
        _response(Y, W.n),
        _covariates(Z, W.n),
        basis,
        "MULTI2SLS",
        weights,
        details={"first_stage": alpha},
    )


def _seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return np.random.SeedSequence(int(rng.integers(2**63)))
    return np.random.SeedSequence(rng)


def _weighted_mean(values: np.ndarray, weights) -> np.ndarray:
    if weights is None:
        return values.mean(axis=0)
    w = np.asarray(weights, dtype=float)
    return (w @ values) / w.sum()


def estimate_sigma_uu(W: FunctionalSample, M: FunctionalSample, basis: BasisSystem, weights=None):
    """Instrument-based estimate of the score covariance of the measurement error.

    Returns ``(sigma_uu, delta_hat)`` where ``delta_hat`` is the ratio
    estimator of the instrument slope on the grid.
    """
    _same_grid(W, M)
    w_mean = _weighted_mean(W.values, weights)
    small = np.flatnonzero(np.abs(w_mean) < 1e-12)
    if small.size:
        t = W.grid.points[small[0]]
        raise RatioDegenerateError(f"mean of W is zero at t={t:.6g}; ratio estimator undefined")
    delta = _weighted_mean(M.values, weights) / w_mean
    if np.any(delta == 0):
        raise RatioDegenerateError("mean of M is zero on part of the grid; cannot rescale instrument")
    m_star = FunctionalSample(M.values / delta, M.grid)
    ws = project_scores(W, basis).scores
    ms = project_scores(m_star, basis).scores
    s_ww = cross_covariance(ws, ws, weights)
    s_mw = cross_covariance(ms, ws, weights)
    return nearest_psd(s_ww - (s_mw + s_mw.T) / 2.0), delta


def fit_simex(
    W: FunctionalSample,
    M: FunctionalSample,
    Y,
    Z,
    K: int,
    cfg: SimexConfig | None = None,
    rng=None,
    *,
    order: int = 4,
    weights=None,
    sigma_uu=None,
) -> FitResult:
    """Simulation-extrapolation with an instrument-based error covariance.

    Parameters
    ----------
    W, M : FunctionalSample
        Proxy curves and instrument curves on one grid.
    Y, Z : array_like
        Outcome and error-free covariates (``Z`` may be None).
    K : int
        Number of basis functions.
    cfg : SimexConfig, optional
    rng : int, Generator or SeedSequence, optional
        Master seed. Each lambda value draws from its own child stream, so
        results do not depend on evaluation order.
    sigma_uu : (K, K) array_like, optional
        Use this error covariance instead of estimating it from M.

    Returns
    -------
    FitResult
        ``details`` holds the lambda grid, the averaged coefficient path
        (rows follow the grid; columns are intercept, omega, gamma), the
        extrapolant polynomial coefficients (highest degree first) and the
        error covariance used.
    """
    cfg = cfg or SimexConfig()
    _same_grid(W, M)
    n = W.n
    y = _response(Y, n)
    Zm = _covariates(Z, n)
    basis = build_bspline_basis(K, order, W.grid)
    if sigma_uu is None:
        s_uu, delta = estimate_sigma_uu(W, M, basis, weights)
    else:
        s_uu = nearest_psd(np.asarray(sigma_uu, dtype=float))
        delta = None
        if s_uu.shape != (K, K):
            raise DimensionError(f"sigma_uu must be {K}x{K}, got {s_uu.shape}")
    vals, vecs = np.linalg.eigh(s_uu)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))

    ws = project_scores(W, basis).scores
    ss = _seed_sequence(rng)
    lam_grid = cfg.lambda_grid
    path = np.empty((lam_grid.size, 1 + K + Zm.shape[1]))
    for j, lam in enumerate(lam_grid):
        gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, j)))
        )
        noise = gen.standard_normal((cfg.n_sim, n, K)) @ factor.T
        acc = np.zeros(path.shape[1])
        for b in range(cfg.n_sim):
            fit = ols_fit(_outcome_design(ws + np.sqrt(lam) * noise[b], Zm), y, weights)
            acc += fit.coefficients
        path[j] = acc / cfg.n_sim

    poly = np.polyfit(lam_grid, path, _EXTRAPOLANT_DEGREE[cfg.extrapolant])
    extrapolated = np.polyval(poly, -1.0)
    details = {
        "lambda_grid": lam_grid,
        "path": path,
        "extrapolant": poly,
        "sigma_uu": s_uu,
        "delta": delta,
    }
    return _assemble(extrapolated, basis, "SIMEX", details)


def fit_by_name(
    name: str,
    *,
    W: FunctionalSample,
    Y,
    Z,
    K: int,
    M: FunctionalSample | None = None,
    X: FunctionalSample | None = None,
    weights=None,
    simex: SimexConfig | None = None,
    rng=None,
    order: int = 4,
) -> FitResult:
    """Dispatch to one of the five estimators by its tag."""
    if name == "Naive":
        return fit_naive(W, Y, Z, K, order=order, weights=weights)
    if name == "Oracle":
        if X is None:
            raise ValueError("the Oracle estimator needs the true curves X")
        return fit_oracle(X, Y, Z, K, order=order, weights=weights)
    if M is None:
        raise ValueError(f"{name} needs instrument curves M")
    if name == "PW2SLS":
        return fit_pw2sls(W, M, Y, Z, K, order=order, weights=weights)
    if name == "MULTI2SLS":
        return fit_multi2sls(W, M, Y, Z, K, order=order, weights=weights)
    if name == "SIMEX":
        return fit_simex(W, M, Y, Z, K, simex, rng, order=order, weights=weights)
    raise ValueError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
