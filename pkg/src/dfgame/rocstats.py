"""Rank statistics for detector evaluation: AUROC and Pearson correlation.

AUROC uses the Mann-Whitney mid-rank formulation (ties count half), with
"fake" as the positive class and higher scores meaning more fake.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ClassMissingError, ParameterError, ShapeError

LABEL_REAL = "real"
LABEL_FAKE = "fake"


@dataclass(frozen=True)
class ScoredSample:
    """A labelled detector output; higher score = more fake."""

    label: str
    score: float

    def __post_init__(self):
        if self.label not in (LABEL_REAL, LABEL_FAKE):
            raise ParameterError(f"label must be 'real' or 'fake', got {self.label!r}")
        if not math.isfinite(self.score):
            raise ParameterError(f"score must be finite, got {self.score!r}")


@dataclass(frozen=True)
class AurocResult:
    auroc: float
    n_real: int
    n_fake: int


def auroc_scores(real_scores, fake_scores) -> AurocResult:
    """AUROC from two score arrays via mid-ranks.

    ``auroc = (R_fake - n_f(n_f+1)/2) / (n_f * n_r)`` where ``R_fake`` is the
    sum of mid-ranks of the fake scores in the pooled ranking; each tied
    (real, fake) pair contributes half a win.
    """
    real = np.asarray(real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores, dtype=np.float64)
    if real.size == 0 or fake.size == 0:
        raise ClassMissingError(
            f"need both classes, got {real.size} real / {fake.size} fake"
        )
    if not (np.isfinite(real).all() and np.isfinite(fake).all()):
        raise ParameterError("scores must be finite")
    pooled = np.concatenate([fake, real])
    ranks = rankdata(pooled, method="average")
    r_fake = float(ranks[: fake.size].sum())
    n_f, n_r = fake.size, real.size
    value = (r_fake - n_f * (n_f + 1) / 2.0) / (n_f * n_r)
    return AurocResult(auroc=value, n_real=int(n_r), n_fake=int(n_f))


def auroc(samples: Iterable[ScoredSample]) -> AurocResult:
    """AUROC over labelled samples; requires at least one of each class."""
    real = [s.score for s in samples if s.label == LABEL_REAL]
    fake = [s.score for s in samples if s.label == LABEL_FAKE]
    return auroc_scores(real, fake)


def pearson(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Sample Pearson correlation; ``None`` when either vector is constant."""
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ShapeError(f"need equal-length vectors, got {xv.shape} vs {yv.shape}")
    if xv.size < 2:
        raise ParameterError(f"need at least 2 points, got {xv.size}")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    ssx = float(dx @ dx)
    ssy = float(dy @ dy)
    if ssx == 0.0 or ssy == 0.0:
        return None
    return float(dx @ dy / math.sqrt(ssx * ssy))
