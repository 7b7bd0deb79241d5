"""Stage two: recover the shared space from pairs of per-layer estimates.

For a pair of layers whose stacked factors ``[Y_t, Y_s]`` have exactly a
``k``-dimensional null space, the null vectors ``V`` satisfy
``Z Z^T = [Y_t, -Y_s] V V^T [Y_t, -Y_s]^T / 2`` whatever rotation each
``Y_t`` carries. Pairs are screened by the ratio of the largest singular
value to the smallest non-null one.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .single import top_eigen_sqrt

_NULL_RTOL = 1e-14


class ScreeningError(RuntimeError):
    """No pair of layers passed the screening threshold."""

    def __init__(self, ratios):
        self.ratios = dict(ratios)
        super().__init__("no identifiable pair: every screening ratio exceeds tau1")


@dataclass
class ScreeningSet:
    pairs: list
    ratios: dict = field(default_factory=dict)
    tau1: float = np.inf

    def __len__(self):
        return len(self.pairs)

    def __contains__(self, pair):
        return tuple(pair) in set(self.pairs)

    def table(self) -> str:
        lines = ["t\ts\tratio\tincluded"]
        for (t, s), r in sorted(self.ratios.items()):
            lines.append(f"{t}\t{s}\t{r:.6g}\t{(t, s) in self}")
        return "\n".join(lines)


def default_tau1(n: int) -> float:
    return float(np.sqrt(2.0 * np.log(n)))


def screening_ratio(Yts: np.ndarray, j: int) -> float:
    """``sigma_1 / sigma_j`` of ``Yts``; ``inf`` if ``sigma_j`` is numerically zero."""
    s = np.linalg.svd(Yts, compute_uv=False)
    if j < 1 or j > s.size:
        raise ValueError(f"sigma_{j} undefined for a {Yts.shape[0]} x {Yts.shape[1]} matrix")
    if s[0] == 0 or s[j - 1] < _NULL_RTOL * s[0]:
        return np.inf
    return float(s[0] / s[j - 1])


def screen_pairs(Ys, k: int, dims, tau1: float) -> ScreeningSet:
    """Keep layer pairs ``(t, s)``, ``t < s``, whose ratio is at most ``tau1``."""
    if len(Ys) < 2:
        raise ValueError("screening needs at least two layers")
    if tau1 < 1:
        raise ValueError("tau1 must be >= 1")
    ratios, pairs = {}, []
    for t, s in itertools.combinations(range(len(Ys)), 2):
        r = screening_ratio(np.hstack([Ys[t], Ys[s]]), k + dims[t] + dims[s])
        ratios[(t, s)] = r
        if r <= tau1:
            pairs.append((t, s))
    return ScreeningSet(pairs, ratios, tau1)


def null_basis(Yts: np.ndarray, k: int) -> np.ndarray:
    """Right singular vectors of ``Yts`` for its ``k`` smallest singular values."""
    m = Yts.shape[1]
    if k == 0:
        return np.zeros((m, 0))
    _, _, Vt = np.linalg.svd(Yts, full_matrices=True)
    return Vt[m - k:].T


def pair_shared_gram(Yt, Ys, k) -> np.ndarray:
    """One pair's estimate of ``Z Z^T``."""
    V = null_basis(np.hstack([Yt, Ys]), k)
    M = np.hstack([Yt, -Ys]) @ V
    return 0.5 * (M @ M.T)


def aggregate_F(Ys, S: ScreeningSet, k: int) -> np.ndarray:
    """Average of the per-pair shared Gram estimates over the screened pairs."""
    if len(S) == 0:
        raise ScreeningError(S.ratios)
    n = Ys[0].shape[0]
    F = np.zeros((n, n))
    for t, s in sorted(S.pairs):
        F += pair_shared_gram(Ys[t], Ys[s], k)
    F /= len(S)
    return (F + F.T) / 2


def sqrt_top_k(F: np.ndarray, k: int) -> np.ndarray:
    """Square-root factor of the top-``k`` eigendecomposition, negatives clamped."""
    return top_eigen_sqrt(F, k)


def hunt_shared(Ys, k: int, dims, tau1: float | None = None, return_F: bool = False):
    """Split per-layer estimates into shared and individual factors.

    Returns ``(Z, W, S)`` where ``W`` is a list of ``n x k_t`` matrices and
    ``S`` the :class:`ScreeningSet`; with ``return_F`` the aggregated
    ``n x n`` matrix is appended.
    """
    Ys = [np.asarray(Y, dtype=float) for Y in Ys]
    for t, Y in enumerate(Ys):
        if Y.shape[1] != k + dims[t]:
            raise ValueError(f"layer {t}: expected {k + dims[t]} columns, got {Y.shape[1]}")
    if tau1 is None:
        tau1 = default_tau1(Ys[0].shape[0])
    S = screen_pairs(Ys, k, dims, tau1)
    F = aggregate_F(Ys, S, k)
    Z = sqrt_top_k(F, k)
    W = [sqrt_top_k(Y @ Y.T - F, kt) for Y, kt in zip(Ys, dims)]
    return (Z, W, S, F) if return_F else (Z, W, S)
