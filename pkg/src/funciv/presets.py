"""Scenario grids for the five simulation studies.

Each preset is a list of :class:`ScenarioConfig` sharing one master seed,
so scenarios within a study reuse the same replicate sub-streams.
"""

from __future__ import annotations

from .simgen import ME_DISTRIBUTIONS, CovarianceSpec, ScenarioConfig

__all__ = ["PRESETS", "STUDY3_ROWS", "STUDY4_PAIRS", "preset", "preset_names"]

MASTER_SEED = 20240601

# (structure, rho_X, rho_U, rho_M)
STUDY3_ROWS = (
    ("IND", 0.0, 0.0, 0.0),
    ("AR1", 0.50, 0.50, 0.50),
    ("AR1", 0.25, 0.50, 0.50),
    ("AR1", 0.75, 0.50, 0.50),
    ("AR1", 0.50, 0.25, 0.50),
    ("AR1", 0.50, 0.75, 0.50),
    ("AR1", 0.50, 0.50, 0.25),
    ("AR1", 0.50, 0.50, 0.75),
    ("CS", 0.50, 0.50, 0.50),
    ("CS", 0.25, 0.50, 0.50),
    ("CS", 0.75, 0.50, 0.50),
    ("CS", 0.50, 0.25, 0.50),
    ("CS", 0.50, 0.75, 0.50),
    ("CS", 0.50, 0.50, 0.25),
    ("CS", 0.50, 0.50, 0.75),
    ("UN", 0.50, 0.50, 0.50),
    ("UN", 0.25, 0.50, 0.50),
    ("UN", 0.75, 0.50, 0.50),
    ("UN", 0.50, 0.25, 0.50),
    ("UN", 0.50, 0.75, 0.50),
    ("UN", 0.50, 0.50, 0.25),
    ("UN", 0.50, 0.50, 0.75),
)

# (sigma_X, sigma_U), ordered by sigma_X / sigma_U
STUDY4_PAIRS = (
    (1.0, 2.0), (1.5, 2.0), (1.0, 1.0), (2.0, 2.0),
    (1.5, 1.0), (1.0, 0.5), (2.0, 1.0), (4.0, 2.0),
    (1.5, 0.5), (2.0, 0.5), (4.0, 1.0), (4.0, 0.5),
)

STUDY5_SIGMA_M = (0.5, 1.0, 2.0, 4.0)
STUDY5_C = (0.0, 0.25, 0.5, 0.75)


def _base() -> ScenarioConfig:
    return ScenarioConfig(seed=MASTER_SEED)


def _study1():
    base = _base()
    return [base.with_(n=n, label=f"n={n}") for n in (100, 500, 1000, 5000)]


def _study2():
    base = _base()
    return [base.with_(me_dist=d, label=f"me={d}") for d in ME_DISTRIBUTIONS]


def _study3():
    base = _base()
    out = []
    for struct, rx, ru, rm in STUDY3_ROWS:
        out.append(base.with_(
            cov_X=CovarianceSpec(struct, rx, 1.5),
            cov_U=CovarianceSpec(struct, ru, 1.0),
            cov_M=CovarianceSpec(struct, rm, 1.0),
            label=f"{struct}_rx={rx}_ru={ru}_rm={rm}",
        ))
    return out


def _study4():
    base = _base()
    return [
        base.with_(
            cov_X=CovarianceSpec("AR1", 0.5, sx),
            cov_U=CovarianceSpec("AR1", 0.5, su),
            label=f"sx={sx}_su={su}",
        )
        for sx, su in STUDY4_PAIRS
    ]


def _study5():
    base = _base()
    out = [
        base.with_(cov_M=CovarianceSpec("AR1", 0.5, sm), label=f"sm={sm}")
        for sm in STUDY5_SIGMA_M
    ]
    out += [base.with_(c=c, label=f"c={c}") for c in STUDY5_C]
    return out


PRESETS = {
    "study1": _study1,
    "study2": _study2,
    "study3": _study3,
    "study4": _study4,
    "study5": _study5,
}


def preset_names() -> tuple[str, ...]:
    return tuple(PRESETS)


def preset(name: str) -> list[ScenarioConfig]:
    """Scenario list of a named study."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {preset_names()}") from None
