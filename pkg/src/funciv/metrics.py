"""Accuracy measures for estimated coefficient curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .fda import TimeGrid, integrate

__all__ = [
    "CurveEnsemble",
    "abias2",
    "aimse",
    "avar",
    "mspee",
    "percent_difference",
]


@dataclass(frozen=True, eq=False)
class CurveEnsemble:
    """Replicate estimates (R x n_grid) of one coefficient curve."""

    curves: np.ndarray
    truth: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        curves = np.atleast_2d(np.asarray(self.curves, dtype=float))
        truth = np.asarray(self.truth, dtype=float).ravel()
        if curves.shape[0] < 1:
            raise DimensionError("an ensemble needs at least one replicate")
        if curves.shape[1] != truth.size or truth.size != self.grid.n_grid:
            raise DimensionError(
                f"curves {curves.shape}, truth {truth.shape} and grid {self.grid.n_grid} disagree"
            )
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "truth", truth)

    @property
    def R(self) -> int:
        return int(self.curves.shape[0])

    @property
    def mean_curve(self) -> np.ndarray:
        return self.curves.mean(axis=0)


def abias2(ens: CurveEnsemble) -> float:
    """Grid-averaged squared bias of the replicate mean curve."""
    return float(np.mean((ens.mean_curve - ens.truth) ** 2))


def avar(ens: CurveEnsemble) -> float:
    """Grid-averaged variance across replicates (denominator R)."""
    return float(np.mean((ens.curves - ens.mean_curve) ** 2))


def aimse(ens: CurveEnsemble) -> float:
    return abias2(ens) + avar(ens)


def mspee(estimate, truth, grid: TimeGrid) -> float:
    """``100 * sqrt(int (truth - est)^2 / int truth^2)``, in percent.

    A 2-D ``estimate`` returns one value per row.
    """
    est = np.asarray(estimate, dtype=float)
    tr = np.asarray(truth, dtype=float)
    num = integrate((est - tr) ** 2, grid)
    den = integrate(tr**2, grid)
    out = 100.0 * np.sqrt(np.asarray(num) / den)
    return float(out) if out.ndim == 0 else out


def percent_difference(corrected, naive, tol: float = 1e-12) -> tuple[float, int]:
    """Mean absolute relative difference from a reference curve, in percent.

    Grid points where ``|naive| < tol`` are skipped.

    Returns
    -------
    value : float
        ``mean(|(corrected - naive) / naive|) * 100`` over the kept points
        (NaN if none remain).
    n_excluded : int
        Number of skipped grid points.
    """
    corr = np.asarray(corrected, dtype=float).ravel()
    ref = np.asarray(naive, dtype=float).ravel()
    if corr.shape != ref.shape:
        raise DimensionError(f"curve lengths differ: {corr.size} vs {ref.size}")
    keep = np.abs(ref) >= tol
    n_excluded = int(np.sum(~keep))
    if not keep.any():
        return float("nan"), n_excluded
    rel = np.abs((corr[keep] - ref[keep]) / ref[keep])
    return float(np.mean(rel) * 100.0), n_excluded
