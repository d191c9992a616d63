"""Command-line interface: ``funciv {simulate,fit,bootstrap,bench}``.

Settings are resolved in three layers: built-in defaults, an optional JSON
file given with ``--config`` and finally explicit flags. The resolved
settings are echoed as the first line of every output file.

Exit codes: 0 on success, 2 for invalid usage or configuration, 1 when a
run fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FunctionalIVError, SchemaError
from .estimators import (
    DEFAULT_K_RANGE,
    ESTIMATORS,
    SimexConfig,
    default_lambda_grid,
    fit_by_name,
    select_K_bic,
)
from .harness import (
    benchmark_fit,
    bootstrap_ci,
    emit_report,
    run_monte_carlo,
    write_band,
)
from .ingest import OutcomeSchema, PreprocessRules, assemble_dataset, load_long_csv, preprocess
from .metrics import percent_difference
from .presets import preset, preset_names
from .simgen import ScenarioConfig

log = logging.getLogger("funciv")

COMMANDS = ("simulate", "fit", "bootstrap", "bench")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (exit code 2)."""


@dataclass
class RunConfig:
    command: str
    preset: str | None = None
    scenario: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    k_min: int = DEFAULT_K_RANGE[0]
    k_max: int = DEFAULT_K_RANGE[1]
    reps: int = 500
    bootstrap_reps: int = 500
    level: float = 0.95
    simex_nsim: int = 50
    lambda_max: float = 2.0001
    lambda_step: float = 0.05
    seed: int | None = None
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    out: str | None = None
    format: str | None = None

    def provenance(self) -> dict:
        """Resolved settings as written into output files (output path omitted)."""
        d = asdict(self)
        d.pop("out")
        d["version"] = __version__
        return d

    @property
    def K_range(self) -> tuple[int, int]:
        return (self.k_min, self.k_max)

    def simex(self) -> SimexConfig:
        return SimexConfig(
            lambda_grid=default_lambda_grid(self.lambda_max, self.lambda_step),
            n_sim=self.simex_nsim,
        )


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def _estimator_list(text: str) -> list[str]:
    names = [s.strip() for s in text.split(",") if s.strip()]
    lookup = {e.lower(): e for e in ESTIMATORS}
    lookup.update({"multi-2sls": "MULTI2SLS", "pw-2sls": "PW2SLS", "multi": "MULTI2SLS", "pw": "PW2SLS"})
    try:
        return [lookup[n.lower()] for n in names]
    except KeyError as exc:
        raise argparse.ArgumentTypeError(f"unknown estimator {exc.args[0]!r}; choose from {ESTIMATORS}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with run settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--estimators", type=_estimator_list, help="comma-separated, e.g. MULTI2SLS,Naive")
    common.add_argument("--k-min", type=_positive(int))
    common.add_argument("--k-max", type=_positive(int))
    common.add_argument("--simex-nsim", type=_positive(int))
    common.add_argument("--lambda-max", type=_positive(float))
    common.add_argument("--lambda-step", type=_positive(float))
    common.add_argument("--threads", type=_positive(int))
    common.add_argument("--out", help="output file")
    common.add_argument("--format", choices=FORMATS)
    common.add_argument("-v", "--verbose", action="count", default=0)

    scenario = argparse.ArgumentParser(add_help=False)
    scenario.add_argument("--preset", help=f"one of {', '.join(preset_names())}")
    scenario.add_argument("--n", type=_positive(int))
    scenario.add_argument("--n-grid", type=_positive(int))

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--curves", help="long-format curve CSV")
    data.add_argument("--outcomes", help="outcome CSV (one row per subject)")
    data.add_argument("--covariates", help="comma-separated covariate columns of the outcome file")
    data.add_argument("--weight-column")

    parser = argparse.ArgumentParser(prog="funciv", description="Functional IV regression with measurement-error correction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, scenario], help="Monte Carlo study")
    p.add_argument("--reps", type=_positive(int), help="replicates per scenario")

    sub.add_parser("fit", parents=[common, data], help="fit estimators on ingested data")

    p = sub.add_parser("bootstrap", parents=[common, data], help="bootstrap confidence bands")
    p.add_argument("--bootstrap-reps", type=_positive(int))
    p.add_argument("--level", type=float)

    p = sub.add_parser("bench", parents=[common, scenario], help="time single fits")
    p.add_argument("--reps", type=_positive(int), help="timed fits per estimator")
    parser.set_defaults(_commands=sub.choices)
    return parser


_FLAG_FIELDS = (
    "preset", "estimators", "k_min", "k_max", "reps", "bootstrap_reps", "level",
    "simex_nsim", "lambda_max", "lambda_step", "seed", "threads", "out", "format",
)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the JSON file and flags, then validate."""
    cfg = RunConfig(command=args.command)
    if args.command == "bench":
        cfg.reps = 5
    if getattr(args, "config", None) is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)} - {"command"}
        unknown = set(doc) - known - {"command", "version"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if doc.get("command", args.command) != args.command:
            raise ConfigError(f"config is for {doc['command']!r}, not {args.command!r}")
        for key in known & set(doc):
            setattr(cfg, key, doc[key])
        if "estimators" in doc:
            try:
                cfg.estimators = _estimator_list(",".join(doc["estimators"]))
            except (TypeError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(str(exc)) from None
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.scenario = dict(cfg.scenario)
    if getattr(args, "n", None) is not None:
        cfg.scenario["n"] = args.n
    if getattr(args, "n_grid", None) is not None:
        cfg.scenario["n_grid"] = args.n_grid
    cfg.data = dict(cfg.data)
    for flag in ("curves", "outcomes", "weight_column"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg.data[flag] = value
    if getattr(args, "covariates", None) is not None:
        cfg.data["covariates"] = [c.strip() for c in args.covariates.split(",") if c.strip()]
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.k_min > cfg.k_max:
        raise ConfigError(f"k-min ({cfg.k_min}) exceeds k-max ({cfg.k_max})")
    if cfg.k_min < 4:
        raise ConfigError("k-min must be at least 4 for cubic splines")
    if not cfg.estimators:
        raise ConfigError("no estimators requested")
    if not 0.0 < float(cfg.level) < 1.0:
        raise ConfigError(f"level must lie in (0, 1), got {cfg.level}")
    if cfg.format is not None and cfg.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    for name in ("reps", "bootstrap_reps", "simex_nsim", "threads"):
        if int(getattr(cfg, name)) < 1:
            raise ConfigError(f"{name} must be >= 1")
    try:
        cfg.simex()
    except ValueError as exc:
        raise ConfigError(f"bad SIMEX settings: {exc}") from None
    if cfg.command in ("simulate", "bench"):
        if cfg.preset is None and not cfg.scenario:
            raise ConfigError("give --preset or a scenario in the config file")
        scenarios(cfg)
    else:
        for key in ("curves", "outcomes"):
            if not cfg.data.get(key):
                raise ConfigError(f"--{key} is required for {cfg.command}")
            if not Path(cfg.data[key]).is_file():
                raise ConfigError(f"{key} file not found: {cfg.data[key]}")
        if cfg.command == "bootstrap" and cfg.bootstrap_reps < 2:
            raise ConfigError("bootstrap-reps must be >= 2")


def scenarios(cfg: RunConfig) -> list[ScenarioConfig]:
    """Scenario list: the preset (with overrides applied) or one inline scenario.

    Overriding a key that the preset varies collapses the scenarios that
    become identical; labels are then rebuilt from the varying and
    overridden keys.
    """
    try:
        if cfg.preset is not None:
            base = [s.to_dict() for s in preset(cfg.preset)]
            over = {k: v for k, v in cfg.scenario.items() if k != "label"}
            if over:
                varying = {k for k in base[0] if k != "label" and len({repr(b[k]) for b in base}) > 1}
                keys = sorted(varying | set(over))
                merged, seen = [], set()
                for b in base:
                    d = {**b, **over}
                    sig = json.dumps({k: v for k, v in d.items() if k != "label"}, sort_keys=True)
                    if sig in seen:
                        continue
                    seen.add(sig)
                    d["label"] = ",".join(f"{k}={d[k]}" for k in keys)
                    merged.append(d)
                base = merged
            out = [ScenarioConfig.from_dict(d) for d in base]
        else:
            out = [ScenarioConfig.from_dict(cfg.scenario)]
        if cfg.seed is not None:
            out = [s.with_(seed=int(cfg.seed)) for s in out]
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return out


def _out_path(cfg: RunConfig, default: str) -> Path:
    path = Path(cfg.out or default)
    if cfg.format is None:
        cfg.format = "json" if path.suffix.lower() == ".json" else "csv"
    return path


def _load_data(cfg: RunConfig):
    d = cfg.data
    try:
        records = load_long_csv(
            d["curves"],
            d.get("schema"),
            role_map=d.get("role_map"),
            max_bad_fraction=float(d.get("max_bad_fraction", 0.0)),
        )
        rules = PreprocessRules.from_dict(d.get("preprocess", {}))
        schema = OutcomeSchema(
            id_column=d.get("id_column", "subject_id"),
            outcome_column=d.get("outcome_column", "Y"),
            covariate_columns=tuple(d.get("covariates", ())),
            weight_column=d.get("weight_column"),
        )
    except TypeError as exc:
        raise ConfigError(f"bad data settings: {exc}") from None
    curves = preprocess(records, rules)
    data, report = assemble_dataset(curves, d["outcomes"], schema)
    log.info(
        "loaded %d subjects (%d dropped in preprocessing, %d curve ids and %d outcome ids unmatched)",
        data.n, curves.n_dropped, len(report.unmatched_curve_ids), len(report.unmatched_outcome_ids),
    )
    return data


def cmd_simulate(cfg: RunConfig) -> int:
    path = _out_path(cfg, "simulate.csv")
    reports = []
    for scen in scenarios(cfg):
        log.info("scenario %s: %d replicates", scen.describe(), cfg.reps)
        reports.append(run_monte_carlo(
            scen, cfg.reps, cfg.estimators, cfg.K_range, cfg.simex(), threads=cfg.threads,
        ))
    for p in emit_report(reports, cfg.format, path, cfg.provenance()):
        print(p)
    flagged = [r for r in reports if r.flagged]
    for r in flagged:
        print(f"warning: more than 1% failed fits in scenario {r.scenario.describe()}: {r.failures}", file=sys.stderr)
    return 1 if flagged else 0


def _fit_all(cfg: RunConfig, data):
    K = select_K_bic(data.W, data.Y, data.Z, cfg.K_range, weights=data.weights)
    names = list(cfg.estimators)
    if "Naive" not in names:
        names.append("Naive")
    root = np.random.SeedSequence(int(cfg.seed or 0))
    fits = {}
    for name in names:
        if name == "Oracle":
            log.warning("Oracle needs the latent curves and is skipped for ingested data")
            continue
        fits[name] = fit_by_name(
            name, W=data.W, M=data.M, Y=data.Y, Z=data.Z, K=K, weights=data.weights,
            simex=cfg.simex(), rng=np.random.SeedSequence(root.entropy, spawn_key=(0,)),
        )
    return K, fits


def _write_rows(path: Path, header, rows, provenance) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config: " + json.dumps(provenance, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_fit(cfg: RunConfig) -> int:
    path = _out_path(cfg, "fit.csv")
    data = _load_data(cfg)
    K, fits = _fit_all(cfg, data)
    naive = fits["Naive"].beta1_curve
    summary = []
    for name, f in fits.items():
        pd, n_excl = percent_difference(f.beta1_curve, naive) if name != "Naive" else (None, 0)
        summary.append({
            "estimator": name,
            "K": K,
            "beta0": float(f.beta0),
            "gamma": dict(zip(data.z_names, map(float, f.gamma))),
            "percent_difference": pd,
            "n_excluded": n_excl,
        })
    t = data.grid.points
    prov = cfg.provenance()
    path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.format == "json":
        doc = {
            "config": prov,
            "t": t.tolist(),
            "curves": {name: f.beta1_curve.tolist() for name, f in fits.items()},
            "summary": summary,
        }
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        print(path)
        return 0
    _write_rows(
        path, ["t", *fits],
        [[repr(float(ti)), *(repr(float(f.beta1_curve[i])) for f in fits.values())] for i, ti in enumerate(t)],
        prov,
    )
    spath = path.with_name(f"{path.stem}_summary.csv")
    header = ["estimator", "K", "beta0", *(f"gamma_{z}" for z in data.z_names), "percent_difference", "n_excluded"]
    rows = [
        [s["estimator"], s["K"], repr(s["beta0"]), *(repr(s["gamma"][z]) for z in data.z_names),
         "" if s["percent_difference"] is None else repr(s["percent_difference"]), s["n_excluded"]]
        for s in summary
    ]
    _write_rows(spath, header, rows, prov)
    print(path)
    print(spath)
    return 0


def cmd_bootstrap(cfg: RunConfig) -> int:
    path = _out_path(cfg, "band.csv")
    data = _load_data(cfg)
    seed = int(cfg.seed or 0)
    names = [e for e in cfg.estimators if e != "Oracle"]
    if not names:
        raise ConfigError("Oracle cannot be bootstrapped on ingested data")
    prov = cfg.provenance()
    for name in names:
        band = bootstrap_ci(
            data, name, cfg.K_range, cfg.bootstrap_reps, float(cfg.level), seed,
            simex=cfg.simex(), threads=cfg.threads,
        )
        target = path if len(names) == 1 else path.with_name(f"{path.stem}_{name}{path.suffix or '.csv'}")
        if cfg.format == "json":
            doc = {
                "config": prov,
                "estimator": name,
                "K": band.K,
                "t": band.grid_points.tolist(),
                "estimate": band.estimate.tolist(),
                "lower": band.lower.tolist(),
                "upper": band.upper.tolist(),
                "significant": band.significant.tolist(),
                "covariates": [
                    {"name": z, "estimate": e, "lower": lo, "upper": hi} for z, e, lo, hi in band.gamma_intervals
                ],
            }
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
            print(target)
        else:
            for p in write_band(band, target, prov):
                print(p)
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    path = _out_path(cfg, "bench.csv")
    scen = scenarios(cfg)[0]
    rows = []
    for name in cfg.estimators:
        res = benchmark_fit(scen, name, cfg.reps, cfg.K_range, cfg.simex())
        rows.append([name, res.n, res.K, res.median, res.mean, res.min, res.max])
        print(f"{name:10s} n={res.n} K={res.K} median={res.median:.4g}s")
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["estimator", "n", "K", "median_s", "mean_s", "min_s", "max_s"]
    if cfg.format == "json":
        doc = {"config": cfg.provenance(), "timings": [dict(zip(header, r)) for r in rows]}
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    else:
        _write_rows(path, header, [[r[0], r[1], r[2], *map(repr, r[3:])] for r in rows], cfg.provenance())
    print(path)
    return 0


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "bootstrap": cmd_bootstrap, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        args._commands[args.command].print_usage(sys.stderr)
        print(f"funciv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    try:
        return HANDLERS[cfg.command](cfg)
    except (ConfigError, SchemaError) as exc:
        print(f"funciv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FunctionalIVError, ValueError, OSError) as exc:
        print(f"funciv {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
