"""Coefficient-recovery metrics: relative l2 error plus support precision/recall.

A Lagrangian is only determined up to a positive scalar multiple, so the
headline l2 error rescales the identified vector by the least-squares
optimal positive factor before comparing (active mode).  Passive fits pin
the known term's coefficient at 1, which fixes the scale already, and get
no alignment.  The unaligned error is kept alongside.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UndefinedMetricError
from .identify import CoefficientVector
from .library import CandidateLibrary


@dataclass(frozen=True)
class TermRow:
    """One library term: truth vs. identification, support agreement."""

    name: str
    true: float
    identified: float
    matched: bool


@dataclass(frozen=True)
class EvalResult:
    l2_rel: float                 # after scale alignment
    l2_raw: float                 # plain relative error, no alignment
    precision: float
    recall: float
    scale: float                  # factor applied to the identified vector
    per_term: tuple

    def __post_init__(self):
        if not 0.0 <= self.precision <= 1.0 or not 0.0 <= self.recall <= 1.0:
            raise ConfigError("precision/recall must lie in [0, 1]")
        if self.l2_rel < 0 or self.l2_raw < 0:
            raise ConfigError("l2 errors must be >= 0")


def align_scale(identified: np.ndarray, truth: np.ndarray) -> float:
    """Least-squares optimal positive rescaling of identified onto truth.

    Falls back to 1 when the optimum is nonpositive (anti-aligned vectors
    carry a genuine error that rescaling must not hide).
    """
    denom = float(identified @ identified)
    if denom == 0.0:
        return 1.0
    s = float(identified @ truth) / denom
    return s if s > 0.0 else 1.0


def evaluate(identified: CoefficientVector, truth: CoefficientVector,
             lib: CandidateLibrary) -> EvalResult:
    """Compare identified coefficients against ground truth over one library.

    Support counts use exact zeros: pruning freezes coefficients at 0.0,
    so no tolerance is involved.  In passive mode both vectors carry the
    known term at coefficient 1; it counts as a (trivially) recovered term.
    """
    if identified.known_index != truth.known_index:
        raise ConfigError("identified and truth disagree on the known term")
    lam_id = identified.full()
    lam_true = truth.full()
    if lam_id.shape != (lib.size,) or lam_true.shape != (lib.size,):
        raise ShapeError("coefficient vectors must match the library size")

    true_nz = lam_true != 0.0
    id_nz = lam_id != 0.0
    if not true_nz.any() or np.linalg.norm(lam_true) == 0.0:
        raise UndefinedMetricError("ground truth has no active terms")
    if not id_nz.any():
        raise UndefinedMetricError("identified model is empty")

    hits = int(np.count_nonzero(id_nz & true_nz))
    precision = hits / int(np.count_nonzero(id_nz))
    recall = hits / int(np.count_nonzero(true_nz))

    norm_true = np.linalg.norm(lam_true)
    l2_raw = float(np.linalg.norm(lam_id - lam_true) / norm_true)
    if identified.known_index is None:
        scale = align_scale(lam_id, lam_true)
    else:
        scale = 1.0
    l2_rel = float(np.linalg.norm(scale * lam_id - lam_true) / norm_true)

    rows = tuple(
        TermRow(name=name, true=float(t), identified=float(g),
                matched=bool((t != 0.0) == (g != 0.0)))
        for name, t, g in zip(lib.names, lam_true, lam_id)
    )
    return EvalResult(l2_rel=l2_rel, l2_raw=l2_raw, precision=precision,
                      recall=recall, scale=scale, per_term=rows)
