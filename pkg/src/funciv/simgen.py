"""Synthetic data for the simulation studies.

Latent curves follow ``X(t) = 1 / (1 + exp(8 (t - 0.5))) + 1 + e_X(t)``.
The proxy is ``W = X + U`` and the instrument ``M = (c sin(2 pi t) + 1) X + eta``.
The outcome is ``Y = int sin(2 pi t) X(t) dt + 2 Zc + 0.6 Zb + eps`` with
``eps ~ N(0, 0.1^2)``, ``Zc ~ N(0, 0.5^2)``, ``Zb ~ Bernoulli(0.6)``.

Every random component is drawn from its own stream keyed by
``(seed, replicate, component)``. Changing, say, the instrument noise level
therefore leaves X, U, Z and the outcome untouched.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, FunctionalIVError, InvalidCorrelationError
from .fda import FunctionalSample, TimeGrid, integrate

__all__ = [
    "COVARIANCE_STRUCTURES",
    "CovarianceSpec",
    "Dataset",
    "ME_DISTRIBUTIONS",
    "ScenarioConfig",
    "TRUE_BETA0",
    "TRUE_GAMMA",
    "build_correlation",
    "generate_dataset",
    "mean_curve",
    "sample_curves",
    "true_beta1",
]

COVARIANCE_STRUCTURES = ("IND", "AR1", "CS", "UN")
ME_DISTRIBUTIONS = ("Normal", "StudentT", "Laplace")
STUDENT_T_DF = 4
UN_STRUCTURE_SEED = 20240917

TRUE_BETA0 = 0.0
TRUE_GAMMA = (2.0, 0.6)
Z_NAMES = ("Zc", "Zb")

# sub-stream identifiers; fixed so adding components never shifts others
_STREAM_X, _STREAM_U, _STREAM_ETA, _STREAM_ZC, _STREAM_ZB, _STREAM_EPS = range(6)


def true_beta1(t) -> np.ndarray:
    """The coefficient function used to generate outcomes, sin(2 pi t)."""
    return np.sin(2.0 * np.pi * np.asarray(t, dtype=float))


def mean_curve(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return 1.0 / (1.0 + np.exp(8.0 * (t - 0.5))) + 1.0


@dataclass(frozen=True)
class CovarianceSpec:
    """Correlation structure and marginal standard deviation of a noise process."""

    structure: str = "AR1"
    rho: float = 0.5
    sigma: float = 1.0

    def __post_init__(self):
        structure = str(self.structure).upper()
        if structure == "AR(1)":
            structure = "AR1"
        if structure not in COVARIANCE_STRUCTURES:
            raise ValueError(f"unknown covariance structure {self.structure!r}")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidCorrelationError(f"rho must be in [0, 1), got {self.rho}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        object.__setattr__(self, "structure", structure)
        if structure == "IND":
            object.__setattr__(self, "rho", 0.0)

    def covariance(self, dim: int, seed: int = UN_STRUCTURE_SEED) -> np.ndarray:
        return self.sigma**2 * build_correlation(self.structure, self.rho, dim, seed)


@functools.lru_cache(maxsize=64)
def _correlation_cached(structure: str, rho: float, dim: int, seed: int) -> np.ndarray:
    idx = np.arange(dim)
    if structure == "IND":
        R = np.eye(dim)
    elif structure == "AR1":
        R = rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    elif structure == "CS":
        R = np.full((dim, dim), rho)
        np.fill_diagonal(R, 1.0)
    elif structure == "UN":
        gen = np.random.default_rng(seed)
        u = gen.uniform(0.5, 1.5, size=(dim, dim))
        off = np.clip(rho * np.triu(u, 1), -0.99, 0.99)
        R = off + off.T
        np.fill_diagonal(R, 1.0)
        vals, vecs = np.linalg.eigh(R)
        R = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        d = np.sqrt(np.diag(R))
        R = R / np.outer(d, d)
        R = (R + R.T) / 2.0
        np.fill_diagonal(R, 1.0)
    else:
        raise ValueError(f"unknown covariance structure {structure!r}")
    R.setflags(write=False)
    return R


def build_correlation(structure: str, rho: float, dim: int, seed: int = UN_STRUCTURE_SEED) -> np.ndarray:
    """Correlation matrix of a given structure.

    ``IND`` is the identity, ``AR1`` has entries ``rho^|i-j|``, ``CS`` a
    common off-diagonal ``rho``. ``UN`` is a fixed pseudo-random matrix with
    off-diagonal entries ``rho * u_ij``, ``u_ij ~ U(0.5, 1.5)`` drawn from
    ``seed``, projected to the PSD cone and rescaled to unit diagonal.
    """
    structure = str(structure).upper()
    if not 0.0 <= rho < 1.0:
        raise InvalidCorrelationError(f"rho must be in [0, 1), got {rho}")
    if dim < 1:
        raise DimensionError(f"dimension must be positive, got {dim}")
    seed = int(seed) if structure == "UN" else 0
    return _correlation_cached(structure, float(rho), int(dim), seed)


@functools.lru_cache(maxsize=64)
def _correlation_factor(structure: str, rho: float, dim: int, seed: int) -> np.ndarray:
    R = build_correlation(structure, rho, dim, seed)
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(R)
        if vals[0] < -1e-8:
            raise FunctionalIVError(f"{structure} correlation matrix is not PSD") from None
        L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    L.setflags(write=False)
    return L


def sample_curves(n: int, grid: TimeGrid, cov: CovarianceSpec, dist: str = "Normal", rng=None) -> FunctionalSample:
    """Draw ``n`` zero-mean curves with covariance ``sigma^2 R``.

    ``StudentT`` (4 degrees of freedom) and ``Laplace`` are elliptical
    scale mixtures of the same Gaussian vector, rescaled so that all three
    laws share the covariance. The Gaussian part is drawn first, so with a
    fixed generator the three laws differ only through the mixing scalar.
    """
    rng = np.random.default_rng(rng)
    dim = grid.n_grid
    if dist not in ME_DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {dist!r}; choose from {ME_DISTRIBUTIONS}")
    seed = UN_STRUCTURE_SEED if cov.structure == "UN" else 0
    L = _correlation_factor(cov.structure, float(cov.rho), dim, seed)
    z = rng.standard_normal((n, dim)) @ L.T
    if dist == "StudentT":
        nu = STUDENT_T_DF
        z *= np.sqrt((nu - 2.0) / rng.chisquare(nu, size=n))[:, None]
    elif dist == "Laplace":
        z *= np.sqrt(rng.standard_exponential(size=n))[:, None]
    return FunctionalSample(cov.sigma * z, grid)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to regenerate one simulation scenario."""

    n: int = 1000
    n_grid: int = 100
    cov_X: CovarianceSpec = field(default_factory=lambda: CovarianceSpec("AR1", 0.5, 1.5))
    cov_U: CovarianceSpec = field(default_factory=lambda: CovarianceSpec("AR1", 0.5, 1.0))
    cov_M: CovarianceSpec = field(default_factory=lambda: CovarianceSpec("AR1", 0.5, 1.0))
    c: float = 0.5
    me_dist: str = "Normal"
    seed: int = 20240601
    label: str = ""

    def __post_init__(self):
        if self.n < 10:
            raise ValueError(f"n must be >= 10, got {self.n}")
        if self.n_grid < 20:
            raise ValueError(f"n_grid must be >= 20, got {self.n_grid}")
        if self.c < 0:
            raise ValueError(f"c must be >= 0, got {self.c}")
        if self.me_dist not in ME_DISTRIBUTIONS:
            raise ValueError(f"unknown measurement-error law {self.me_dist!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        """Flat JSON-ready representation."""
        out = {"n": self.n, "n_grid": self.n_grid}
        for role in ("X", "U", "M"):
            spec = getattr(self, f"cov_{role}")
            out[f"struct_{role}"] = spec.structure
            out[f"rho_{role}"] = spec.rho
            out[f"sigma_{role}"] = spec.sigma
        out.update(c=self.c, me_dist=self.me_dist, seed=int(self.seed), label=self.label)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        base = cls()
        kwargs = {}
        for key in ("n", "n_grid", "seed"):
            if key in d:
                kwargs[key] = int(d[key])
        if "c" in d:
            kwargs["c"] = float(d["c"])
        for key in ("me_dist", "label"):
            if key in d:
                kwargs[key] = str(d[key])
        for role in ("X", "U", "M"):
            spec = getattr(base, f"cov_{role}")
            kwargs[f"cov_{role}"] = CovarianceSpec(
                d.get(f"struct_{role}", spec.structure),
                float(d.get(f"rho_{role}", spec.rho)),
                float(d.get(f"sigma_{role}", spec.sigma)),
            )
        unknown = set(d) - set(base.to_dict())
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**kwargs)

    def with_(self, **changes) -> ScenarioConfig:
        return replace(self, **changes)

    def describe(self) -> str:
        if self.label:
            return self.label
        d = self.to_dict()
        return ",".join(f"{k}={v}" for k, v in d.items() if k not in ("label", "seed"))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcome, functional covariates and scalar covariates for ``n`` subjects.

    ``Z`` is an ``n x p`` matrix; simulated data use the columns
    ``(Zc, Zb)``. ``X`` is present only for simulated data.
    """

    Y: np.ndarray
    W: FunctionalSample
    M: FunctionalSample
    Z: np.ndarray
    X: FunctionalSample | None = None
    weights: np.ndarray | None = None
    z_names: tuple[str, ...] = Z_NAMES
    subject_ids: tuple | None = None

    def __post_init__(self):
        n = self.W.n
        Y = np.asarray(self.Y, dtype=float).ravel()
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.size == 0:
            Z = np.empty((n, 0))
        rows = {"Y": Y.size, "M": self.M.n, "Z": Z.shape[0]}
        if self.X is not None:
            rows["X"] = self.X.n
        if self.weights is not None:
            rows["weights"] = np.asarray(self.weights).size
        bad = {k: v for k, v in rows.items() if v != n}
        if bad:
            raise DimensionError(f"row counts disagree with W (n={n}): {bad}")
        if len(self.z_names) != Z.shape[1]:
            raise DimensionError(f"{len(self.z_names)} covariate names for {Z.shape[1]} columns")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Z", Z)
        if self.weights is not None:
            object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())

    @property
    def n(self) -> int:
        return self.W.n

    @property
    def grid(self) -> TimeGrid:
        return self.W.grid

    @property
    def Zc(self) -> np.ndarray:
        return self.Z[:, self.z_names.index("Zc")]

    @property
    def Zb(self) -> np.ndarray:
        return self.Z[:, self.z_names.index("Zb")]

    def take(self, rows) -> Dataset:
        rows = np.asarray(rows)
        return Dataset(
            Y=self.Y[rows],
            W=self.W.take(rows),
            M=self.M.take(rows),
            Z=self.Z[rows],
            X=None if self.X is None else self.X.take(rows),
            weights=None if self.weights is None else self.weights[rows],
            z_names=self.z_names,
            subject_ids=None if self.subject_ids is None else tuple(self.subject_ids[i] for i in rows),
        )


def _stream(cfg: ScenarioConfig, replicate: int, component: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(cfg.seed), spawn_key=(int(replicate), component))
    return np.random.Generator(np.random.PCG64(ss))


def generate_dataset(cfg: ScenarioConfig, replicate: int = 0) -> Dataset:
    """Simulate one data set for ``cfg``; ``replicate`` selects independent streams."""
    grid = TimeGrid.uniform(cfg.n_grid)
    t = grid.points
    n = cfg.n
    eps_x = sample_curves(n, grid, cfg.cov_X, "Normal", _stream(cfg, replicate, _STREAM_X))
    u = sample_curves(n, grid, cfg.cov_U, cfg.me_dist, _stream(cfg, replicate, _STREAM_U))
    eta = sample_curves(n, grid, cfg.cov_M, "Normal", _stream(cfg, replicate, _STREAM_ETA))
    zc = 0.5 * _stream(cfg, replicate, _STREAM_ZC).standard_normal(n)
    zb = (_stream(cfg, replicate, _STREAM_ZB).random(n) < 0.6).astype(float)
    eps = 0.1 * _stream(cfg, replicate, _STREAM_EPS).standard_normal(n)

    X = mean_curve(t) + eps_x.values
    W = X + u.values
    delta = cfg.c * np.sin(2.0 * np.pi * t) + 1.0
    M = delta * X + eta.values
    Y = TRUE_BETA0 + integrate(true_beta1(t) * X, grid) + TRUE_GAMMA[0] * zc + TRUE_GAMMA[1] * zb + eps
    return Dataset(
        Y=Y,
        W=FunctionalSample(W, grid),
        M=FunctionalSample(M, grid),
        Z=np.column_stack([zc, zb]),
        X=FunctionalSample(X, grid),
    )
