"""Stage one: per-layer latent factor estimation by projected gradient ascent."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expfam import FamilyLike, get_family


class NumericalError(ArithmeticError):
    """Non-finite objective during an iterative fit."""

    def __init__(self, msg, iteration=None):
        super().__init__(msg if iteration is None else f"{msg} (iteration {iteration})")
        self.iteration = iteration


@dataclass
class SingleFitConfig:
    d: int
    eta: float = 1.0
    max_iter: int = 2000
    M1: float = np.inf
    tol: float = 1e-9
    backtrack: bool = True

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


def pair_sum(M: np.ndarray) -> float:
    """Sum of a symmetric matrix over ``i <= j``."""
    return 0.5 * (M.sum() + np.trace(M))


def single_loglik(Y, A, fam: FamilyLike) -> float:
    """``sum_{i<=j} A_ij theta_ij - nu(theta_ij)`` with ``theta = Y Y^T``."""
    fam = get_family(fam)
    theta = Y @ Y.T
    return float(pair_sum(A * theta - fam.nu_(theta)))


def single_grad(Y, A, fam: FamilyLike) -> np.ndarray:
    """Gradient of :func:`single_loglik` in ``Y``.

    With residuals ``R = A - nu'(Y Y^T)`` this is ``(R + diag(R)) Y``; the
    diagonal term appears because the ``i = j`` likelihood terms are counted
    once while off-diagonal pairs contribute to two rows.
    """
    fam = get_family(fam)
    R = A - fam.mean_(Y @ Y.T)
    return R @ Y + R.diagonal()[:, None] * Y


def project_rows(X: np.ndarray, M1: float) -> np.ndarray:
    """Euclidean projection onto ``{X : max_i ||x_i|| <= M1}``."""
    if not np.isfinite(M1) or X.shape[1] == 0:
        return X
    sq = np.einsum("ij,ij->i", X, X)
    if sq.max(initial=0.0) <= M1 * M1:
        return X
    norms = np.sqrt(sq)
    scale = np.where(norms > M1, M1 / np.where(norms > 0, norms, 1.0), 1.0)
    return X * scale[:, None]


def top_eigen_sqrt(S: np.ndarray, d: int) -> np.ndarray:
    """``U_d diag(max(lam_d, 0))^{1/2}`` for the ``d`` largest eigenpairs of ``S``.

    Eigenvectors are sign-normalised so their first non-negligible entry is
    positive.
    """
    n = S.shape[0]
    if d > n:
        raise ValueError(f"requested {d} eigenpairs of a {n} x {n} matrix")
    if d == 0:
        return np.zeros((n, 0))
    lam, U = np.linalg.eigh((S + S.T) / 2)
    lam, U = lam[::-1][:d], U[:, ::-1][:, :d]
    for c in range(d):
        col = U[:, c]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            U[:, c] = -col
    return U * np.sqrt(np.clip(lam, 0.0, None))


def spectral_init(A, d: int, fam: FamilyLike) -> np.ndarray:
    """Rank-``d`` PSD factor of the entrywise-linked, clipped adjacency."""
    fam = get_family(fam)
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if d > n:
        raise ValueError(f"d={d} exceeds n={n}")
    if fam.name == "bernoulli":
        S = fam.link(np.clip(A, 1.0 / n, 1.0 - 1.0 / n))
    elif fam.name == "poisson":
        S = fam.link(np.clip(A, 1.0 / n, None))
    else:
        S = A
    return top_eigen_sqrt(S, d)


def fit_individual(A, cfg: SingleFitConfig, fam: FamilyLike, init=None, return_trace=False):
    """Projected gradient ascent on one layer's likelihood.

    Starts from :func:`spectral_init` (or ``init``). Each step is
    ``Y <- P(Y + (eta / n) * grad)``; with ``cfg.backtrack`` a step that
    lowers the likelihood is halved up to 30 times, and if none succeeds the
    iteration stops. Stops when the relative likelihood change drops below
    ``cfg.tol``.
    """
    fam = get_family(fam)
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    Y = project_rows(spectral_init(A, cfg.d, fam) if init is None else np.array(init, float), cfg.M1)
    base = cfg.eta / n
    lik = single_loglik(Y, A, fam)
    if not np.isfinite(lik):
        raise NumericalError("non-finite likelihood at initialisation", 0)
    trace = [lik]
    for it in range(1, cfg.max_iter + 1):
        g = single_grad(Y, A, fam)
        step = base
        for _ in range(31 if cfg.backtrack else 1):
            Y_new = project_rows(Y + step * g, cfg.M1)
            new = single_loglik(Y_new, A, fam)
            if not cfg.backtrack or (np.isfinite(new) and new >= lik):
                break
            step *= 0.5
        else:
            break  # no ascent step found: stationary to working precision
        if not np.isfinite(new):
            raise NumericalError("non-finite likelihood", it)
        change = abs(new - lik) / max(abs(lik), 1e-300)
        Y, lik = Y_new, new
        trace.append(lik)
        if change < cfg.tol:
            break
    return (Y, np.array(trace)) if return_trace else Y
