"""Rotation-invariant error measures for factor estimates."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .netdata import LatentFactors

STAGES = ("hunt", "pgd", "onestep")


def procrustes_distance2(X, Y) -> float:
    """``min_Q ||X - Y Q||_F^2`` over orthogonal ``Q``.

    Closed form ``||X||^2 + ||Y||^2 - 2 ||Y^T X||_*``.
    """
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    if X.shape[1] == 0:
        return 0.0
    nuc = np.linalg.svd(Y.T @ X, compute_uv=False).sum()
    return float(max(np.sum(X * X) + np.sum(Y * Y) - 2.0 * nuc, 0.0))


def gram_error(X, Y) -> float:
    """``||X X^T - Y Y^T||_F^2 / n``; column counts may differ."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch {X.shape[0]} vs {Y.shape[0]}")
    D = X @ X.T - Y @ Y.T
    return float(np.sum(D * D) / X.shape[0])


@dataclass
class ErrorRecord:
    dist2_Z: float
    max_dist2_W: float
    gram_err_Z: float
    per_layer_gram_err: list = field(default_factory=list)
    stage: str = "onestep"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")

    def as_dict(self):
        return asdict(self)


def evaluate(f_hat: LatentFactors, f_star: LatentFactors, stage: str) -> ErrorRecord:
    if f_hat.Z.shape != f_star.Z.shape or f_hat.dims != f_star.dims:
        raise ValueError("estimate and truth have different dimensions")
    dW = [procrustes_distance2(a, b) for a, b in zip(f_hat.W, f_star.W)]
    return ErrorRecord(
        dist2_Z=procrustes_distance2(f_hat.Z, f_star.Z),
        max_dist2_W=max(dW, default=0.0),
        gram_err_Z=gram_error(f_hat.Z, f_star.Z),
        per_layer_gram_err=[gram_error(a, b) for a, b in zip(f_hat.W, f_star.W)],
        stage=stage,
    )
