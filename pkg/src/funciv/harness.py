"""Monte Carlo replication, bootstrap bands, timing and report files."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FunctionalIVError
from .estimators import DEFAULT_K_RANGE, ESTIMATORS, SimexConfig, fit_by_name, select_K_bic
from .fda import TimeGrid
from .metrics import CurveEnsemble, abias2, avar, mspee
from .simgen import Dataset, ScenarioConfig, generate_dataset, true_beta1

__all__ = [
    "BenchmarkResult",
    "BootstrapBand",
    "EstimatorSummary",
    "MonteCarloReport",
    "benchmark_fit",
    "bootstrap_ci",
    "emit_report",
    "read_report",
    "run_monte_carlo",
    "write_band",
]

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("abias2", "avar", "aimse", "mspee")
FAILURE_FLAG_RATE = 0.01
_SIMEX_STREAM = 1000


def _ordered(estimators: Iterable[str]) -> tuple[str, ...]:
    wanted = set(estimators)
    unknown = wanted - set(ESTIMATORS)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
    return tuple(e for e in ESTIMATORS if e in wanted)


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


@dataclass
class EstimatorSummary:
    abias2: float
    avar: float
    aimse: float
    mean_mspee: float
    mean_fit_seconds: float
    n_success: int
    n_failed: int
    mean_curve: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    mean_gamma: np.ndarray

    def to_dict(self) -> dict:
        return {
            "abias2": self.abias2,
            "avar": self.avar,
            "aimse": self.aimse,
            "mean_mspee": self.mean_mspee,
            "mean_fit_seconds": self.mean_fit_seconds,
            "n_success": self.n_success,
            "n_failed": self.n_failed,
            "mean_curve": self.mean_curve.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "mean_gamma": self.mean_gamma.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EstimatorSummary:
        arrays = ("mean_curve", "lower", "upper", "mean_gamma")
        kw = {k: (np.asarray(v, dtype=float) if k in arrays else v) for k, v in d.items()}
        return cls(**kw)


@dataclass
class MonteCarloReport:
    """Aggregate performance of several estimators over R simulated data sets."""

    scenario: ScenarioConfig
    R: int
    summaries: dict[str, EstimatorSummary]
    truth_curve: np.ndarray
    grid_points: np.ndarray
    K_counts: dict[int, int] = field(default_factory=dict)
    failures: dict[str, list[str]] = field(default_factory=dict)

    @property
    def estimators(self) -> tuple[str, ...]:
        return tuple(self.summaries)

    @property
    def flagged(self) -> bool:
        """True when any estimator failed on more than 1% of replicates."""
        return any(s.n_failed > FAILURE_FLAG_RATE * self.R for s in self.summaries.values())

    def __getitem__(self, estimator: str) -> EstimatorSummary:
        return self.summaries[estimator]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "R": self.R,
            "summaries": {k: v.to_dict() for k, v in self.summaries.items()},
            "truth_curve": self.truth_curve.tolist(),
            "grid_points": self.grid_points.tolist(),
            "K_counts": {str(k): v for k, v in self.K_counts.items()},
            "failures": self.failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MonteCarloReport:
        return cls(
            scenario=ScenarioConfig.from_dict(d["scenario"]),
            R=int(d["R"]),
            summaries={k: EstimatorSummary.from_dict(v) for k, v in d["summaries"].items()},
            truth_curve=np.asarray(d["truth_curve"], dtype=float),
            grid_points=np.asarray(d["grid_points"], dtype=float),
            K_counts={int(k): int(v) for k, v in d.get("K_counts", {}).items()},
            failures={k: list(v) for k, v in d.get("failures", {}).items()},
        )


@dataclass
class _ReplicateResult:
    K: int | None
    curves: dict[str, np.ndarray]
    gammas: dict[str, np.ndarray]
    seconds: dict[str, float]
    errors: dict[str, str]


def _simex_seed(cfg: ScenarioConfig, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(cfg.seed), spawn_key=(int(replicate), _SIMEX_STREAM))


def _run_replicate(cfg, r, estimators, K_range, simex, order) -> _ReplicateResult:
    data = generate_dataset(cfg, r)
    out = _ReplicateResult(None, {}, {}, {}, {})
    try:
        K = select_K_bic(data.W, data.Y, data.Z, K_range, order)
    except FunctionalIVError as exc:
        out.errors = {e: f"K selection: {exc}" for e in estimators}
        return out
    out.K = K
    for name in estimators:
        t0 = time.perf_counter()
        try:
            fit = fit_by_name(
                name, W=data.W, M=data.M, X=data.X, Y=data.Y, Z=data.Z, K=K,
                simex=simex, rng=_simex_seed(cfg, r), order=order,
            )
        except FunctionalIVError as exc:
            out.errors[name] = str(exc)
            continue
        out.seconds[name] = time.perf_counter() - t0
        out.curves[name] = fit.beta1_curve
        out.gammas[name] = fit.gamma
    return out


def run_monte_carlo(
    cfg: ScenarioConfig,
    R: int,
    estimators: Iterable[str] = ESTIMATORS,
    K_range=DEFAULT_K_RANGE,
    simex: SimexConfig | None = None,
    *,
    threads: int = 1,
    order: int = 4,
) -> MonteCarloReport:
    """Simulate ``R`` data sets from ``cfg`` and score each estimator.

    Replicate ``r`` always uses the data streams ``(cfg.seed, r)``, so the
    generated data do not depend on which estimators are requested or on
    the number of threads. K is chosen by BIC once per replicate and shared
    by all estimators. Replicates on which an estimator fails are excluded
    from its metrics and counted in ``n_failed``.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    names = _ordered(estimators)
    simex = simex or SimexConfig()
    results = _map(lambda r: _run_replicate(cfg, r, names, K_range, simex, order), range(R), threads)

    grid = TimeGrid.uniform(cfg.n_grid)
    truth = true_beta1(grid.points)
    K_counts: dict[int, int] = {}
    for res in results:
        if res.K is not None:
            K_counts[res.K] = K_counts.get(res.K, 0) + 1
    summaries = {}
    failures = {}
    for name in names:
        ok = [res for res in results if name in res.curves]
        errs = [f"replicate {r}: {res.errors[name]}" for r, res in enumerate(results) if name in res.errors]
        if errs:
            failures[name] = errs
            log.warning("%s failed on %d of %d replicates", name, len(errs), R)
        if not ok:
            nan_curve = np.full(grid.n_grid, np.nan)
            summaries[name] = EstimatorSummary(
                np.nan, np.nan, np.nan, np.nan, np.nan, 0, len(errs), nan_curve, nan_curve, nan_curve, np.array([])
            )
            continue
        curves = np.array([res.curves[name] for res in ok])
        ens = CurveEnsemble(curves, truth, grid)
        b2, v = abias2(ens), avar(ens)
        lo, hi = np.quantile(curves, [0.025, 0.975], axis=0)
        summaries[name] = EstimatorSummary(
            abias2=b2,
            avar=v,
            aimse=b2 + v,
            mean_mspee=float(np.mean(mspee(curves, truth, grid))),
            mean_fit_seconds=float(np.mean([res.seconds[name] for res in ok])),
            n_success=len(ok),
            n_failed=len(errs),
            mean_curve=ens.mean_curve,
            lower=lo,
            upper=hi,
            mean_gamma=np.mean([res.gammas[name] for res in ok], axis=0),
        )
    return MonteCarloReport(
        scenario=cfg,
        R=R,
        summaries=summaries,
        truth_curve=truth,
        grid_points=grid.points.copy(),
        K_counts=dict(sorted(K_counts.items())),
        failures=failures,
    )


@dataclass
class BootstrapBand:
    """Pointwise percentile bootstrap band for one estimator."""

    grid_points: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    B: int
    level: float
    estimator: str
    K: int
    gamma_estimate: np.ndarray
    gamma_lower: np.ndarray
    gamma_upper: np.ndarray
    z_names: tuple[str, ...] = ()
    beta0: float = float("nan")
    n_retries: int = 0
    curves: np.ndarray | None = None

    @property
    def significant(self) -> np.ndarray:
        """Grid points where the band excludes zero."""
        return (self.lower > 0) | (self.upper < 0)

    @property
    def gamma_intervals(self) -> list[tuple[str, float, float, float]]:
        return [
            (name, float(e), float(lo), float(hi))
            for name, e, lo, hi in zip(self.z_names, self.gamma_estimate, self.gamma_lower, self.gamma_upper)
        ]


def _percentile_bounds(samples: np.ndarray, level: float):
    # Inverted-CDF order statistics; rounding keeps B * alpha from landing
    # one rank high through float noise in 1 - level.
    B = samples.shape[0]
    alpha = (1.0 - level) / 2.0
    k_lo = max(math.ceil(round(B * alpha, 9)), 1)
    k_hi = min(max(math.ceil(round(B * (1.0 - alpha), 9)), 1), B)
    srt = np.sort(samples, axis=0)
    return srt[k_lo - 1], srt[k_hi - 1]


def bootstrap_ci(
    data: Dataset,
    estimator: str,
    K_range=DEFAULT_K_RANGE,
    B: int = 500,
    level: float = 0.95,
    seed: int = 0,
    *,
    simex: SimexConfig | None = None,
    max_retries: int | None = None,
    threads: int = 1,
    order: int = 4,
    keep_curves: bool = False,
) -> BootstrapBand:
    """Nonparametric (subject-level) percentile bootstrap for one estimator.

    Each resample redraws ``n`` subjects with replacement, re-selects K by
    BIC and refits. The bounds at each grid point are the ``(1 - level)/2``
    and ``(1 + level)/2`` empirical quantiles (inverted-CDF order
    statistics) of the resampled curves. Resamples whose refit fails are
    redrawn; at most ``max_retries`` redraws (default ``B``) are allowed in
    total.
    """
    if B < 2:
        raise ValueError(f"B must be >= 2, got {B}")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    _ordered([estimator])
    simex = simex or SimexConfig()
    max_retries = B if max_retries is None else max_retries
    root = np.random.SeedSequence(int(seed))

    def child(*key) -> np.random.SeedSequence:
        return np.random.SeedSequence(root.entropy, spawn_key=key)

    def fit(d: Dataset, sim_seed):
        K = select_K_bic(d.W, d.Y, d.Z, K_range, order, d.weights)
        return fit_by_name(
            estimator, W=d.W, M=d.M, X=d.X, Y=d.Y, Z=d.Z, K=K,
            weights=d.weights, simex=simex, rng=sim_seed, order=order,
        )

    full = fit(data, child(0))

    def one(b: int):
        attempts = 0
        while True:
            gen = np.random.Generator(np.random.PCG64(child(1, b, attempts)))
            rows = gen.integers(0, data.n, size=data.n)
            try:
                res = fit(data.take(rows), child(2, b, attempts))
                return res.beta1_curve, res.gamma, attempts
            except FunctionalIVError as exc:
                log.info("bootstrap resample %d attempt %d failed: %s", b, attempts, exc)
                attempts += 1
                if attempts > max_retries:
                    raise

    results = _map(one, range(B), threads)
    n_retries = sum(r[2] for r in results)
    if n_retries > max_retries:
        raise FunctionalIVError(f"{n_retries} bootstrap redraws exceed the limit of {max_retries}")
    if n_retries:
        log.warning("bootstrap needed %d redraws for %d resamples", n_retries, B)
    curves = np.array([r[0] for r in results])
    gammas = np.array([r[1] for r in results]).reshape(B, -1)
    lo, hi = _percentile_bounds(curves, level)
    if gammas.shape[1]:
        g_lo, g_hi = _percentile_bounds(gammas, level)
    else:
        g_lo = g_hi = np.empty(0)
    return BootstrapBand(
        grid_points=data.grid.points.copy(),
        estimate=full.beta1_curve,
        lower=lo,
        upper=hi,
        B=B,
        level=level,
        estimator=estimator,
        K=full.K,
        gamma_estimate=full.gamma,
        gamma_lower=g_lo,
        gamma_upper=g_hi,
        z_names=tuple(data.z_names),
        beta0=full.beta0,
        n_retries=n_retries,
        curves=curves if keep_curves else None,
    )


@dataclass
class BenchmarkResult:
    estimator: str
    n: int
    K: int
    times: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.times))

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def min(self) -> float:
        return float(np.min(self.times))

    @property
    def max(self) -> float:
        return float(np.max(self.times))


def benchmark_fit(
    cfg: ScenarioConfig,
    estimator: str,
    reps: int = 5,
    K_range=DEFAULT_K_RANGE,
    simex: SimexConfig | None = None,
    *,
    warmup: int = 1,
    data: Dataset | None = None,
    K: int | None = None,
) -> BenchmarkResult:
    """Wall-clock seconds per single fit on one pre-generated data set.

    Data generation and K selection happen before timing starts; ``warmup``
    untimed fits are run first.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    _ordered([estimator])
    data = data if data is not None else generate_dataset(cfg, 0)
    if K is None:
        K = select_K_bic(data.W, data.Y, data.Z, K_range)
    simex = simex or SimexConfig()

    def once():
        fit_by_name(
            estimator, W=data.W, M=data.M, X=data.X, Y=data.Y, Z=data.Z, K=K,
            simex=simex, rng=_simex_seed(cfg, 0),
        )

    for _ in range(warmup):
        once()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        once()
        times.append(time.perf_counter() - t0)
    return BenchmarkResult(estimator, data.n, K, np.array(times))


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _config_line(provenance: dict | None) -> str:
    return "# config: " + json.dumps(provenance or {}, sort_keys=True) + "\n"


def _fmt(x) -> str:
    return repr(float(x))


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", text).strip("_")[:80] or "scenario"


def report_table(reports: Sequence[MonteCarloReport]) -> tuple[list[str], list[list[str]]]:
    """Rows = scenarios, columns = scenario, R, then estimator x metric."""
    names = _ordered({e for rep in reports for e in rep.estimators})
    header = ["scenario", "R"] + [f"{e}_{m}" for e in names for m in METRIC_COLUMNS]
    rows = []
    for rep in reports:
        row = [rep.scenario.describe(), str(rep.R)]
        for e in names:
            s = rep.summaries.get(e)
            if s is None:
                row += [""] * len(METRIC_COLUMNS)
            else:
                row += [_fmt(s.abias2), _fmt(s.avar), _fmt(s.aimse), _fmt(s.mean_mspee)]
        rows.append(row)
    return header, rows


def curve_table(report: MonteCarloReport) -> tuple[list[str], list[list[str]]]:
    header = ["t", "truth"]
    cols = [report.grid_points, report.truth_curve]
    for e, s in report.summaries.items():
        header += [f"{e}_mean", f"{e}_lower", f"{e}_upper"]
        cols += [s.mean_curve, s.lower, s.upper]
    rows = [[_fmt(v) for v in vals] for vals in zip(*cols)]
    return header, rows


def _write_csv(path: Path, header, rows, provenance) -> None:
    buf = io.StringIO()
    buf.write(_config_line(provenance))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_csv_table(path) -> tuple[list[str], list[list[str]], dict]:
    """Read a CSV written by this module; returns header, rows and the embedded config."""
    config: dict = {}
    lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# config: "):
            config = json.loads(line[len("# config: "):])
        elif not line.startswith("#"):
            lines.append(line)
    table = list(csv.reader(lines))
    return table[0], table[1:], config


def emit_report(
    reports: MonteCarloReport | Sequence[MonteCarloReport],
    fmt: str,
    path,
    provenance: dict | None = None,
    *,
    curves: bool = True,
) -> list[Path]:
    """Write Monte Carlo reports as CSV or JSON, plus one curve file per scenario.

    Curve files go next to ``path`` as ``<stem>_curves_<i>[_<label>].csv``
    with columns ``t, truth`` followed by mean, lower and upper curves of
    each estimator. Every file starts with a ``# config:`` line holding
    ``provenance``. Returns the paths written.
    """
    if isinstance(reports, MonteCarloReport):
        reports = [reports]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        header, rows = report_table(reports)
        _write_csv(path, header, rows, provenance)
    elif fmt == "json":
        doc = {"config": provenance or {}, "reports": [r.to_dict() for r in reports]}
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}; use 'csv' or 'json'")
    written = [path]
    if curves:
        for i, rep in enumerate(reports):
            tag = f"_{_slug(rep.scenario.label)}" if rep.scenario.label else ""
            cpath = path.with_name(f"{path.stem}_curves_{i}{tag}.csv")
            header, rows = curve_table(rep)
            _write_csv(cpath, header, rows, provenance)
            written.append(cpath)
    return written


def read_report(path) -> list[MonteCarloReport]:
    """Load reports written by :func:`emit_report` in JSON format."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [MonteCarloReport.from_dict(d) for d in doc["reports"]]


def write_band(band: BootstrapBand, path, provenance: dict | None = None) -> list[Path]:
    """Band file (t, estimate, lower, upper, significant) and a covariate interval file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sig = band.significant
    rows = [
        [_fmt(t), _fmt(e), _fmt(lo), _fmt(hi), str(int(s))]
        for t, e, lo, hi, s in zip(band.grid_points, band.estimate, band.lower, band.upper, sig)
    ]
    _write_csv(path, ["t", "estimate", "lower", "upper", "significant"], rows, provenance)
    gpath = path.with_name(f"{path.stem}_covariates.csv")
    grows = [
        [name, _fmt(e), _fmt(lo), _fmt(hi), str(int(lo > 0 or hi < 0))]
        for name, e, lo, hi in band.gamma_intervals
    ]
    _write_csv(gpath, ["covariate", "estimate", "lower", "upper", "significant"], grows, provenance)
    return [path, gpath]
