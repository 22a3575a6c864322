"""Joint hyperspectral unmixing via turbo bilinear approximate message passing.

Public surface: data model (`HsiCube`, `Endmembers`, `Abundances`), the
unmixing pipeline (`unmix`, `TurboOptions`, `select_model_order`), baselines
and metrics (`fsnmf_extract`, `fcls`, `sad`, `aligned_nmse`, `evaluate`),
and the synthetic-scene generator (`SyntheticSpec`, `gen_synthetic`).
"""

from .cube import (
    Abundances,
    AugmentedObs,
    Endmembers,
    HsiCube,
    augment,
    mean_remove,
    simplex_project,
)
from .baselines import fcls, fsnmf_extract
from .metrics import MetricsReport, aligned_nmse, evaluate, sad
from .model_order import MosOptions, MosResult, dof_count, mos_score, select_model_order
from .synthetic import SyntheticSpec, gen_synthetic
from .turbo import (
    ModelParams,
    TurboOptions,
    TurboState,
    UnmixResult,
    initialize,
    turbo_iterate,
    unmix,
)

__all__ = [
    "Abundances",
    "AugmentedObs",
    "Endmembers",
    "HsiCube",
    "MetricsReport",
    "ModelParams",
    "MosOptions",
    "MosResult",
    "SyntheticSpec",
    "TurboOptions",
    "TurboState",
    "UnmixResult",
    "aligned_nmse",
    "augment",
    "dof_count",
    "evaluate",
    "fcls",
    "fsnmf_extract",
    "gen_synthetic",
    "initialize",
    "mean_remove",
    "mos_score",
    "sad",
    "select_model_order",
    "simplex_project",
    "turbo_iterate",
    "unmix",
]

__version__ = "0.1.0"
