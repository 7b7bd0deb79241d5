"""Scikit-learn style estimator for shared and layer-specific latent factors."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .expfam import get_family
from .hunt import ScreeningSet, default_tau1, hunt_shared
from .netdata import LatentFactors, MultiplexNetwork
from .refine import RefineConfig, joint_loglik, one_step_update, pgd_refine
from .single import SingleFitConfig, fit_individual


@dataclass
class FitReport:
    """Everything produced along the way by :class:`SharedLatentSpaceModel`."""

    individual: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)
    screening: ScreeningSet | None = None
    single_traces: list = field(default_factory=list)
    pgd_trace: np.ndarray | None = None
    timings: dict = field(default_factory=dict)
    M1: float = np.inf
    tau1: float = np.nan


def check_multiplex(X, family=None, validate_support=True):
    """Return ``(layers, family)`` with ``layers`` a float ``(T, n, n)`` array.

    Accepts a :class:`MultiplexNetwork`, a 3-d array or a list of square
    matrices. Layers must be finite and symmetric.
    """
    if isinstance(X, MultiplexNetwork):
        fam = X.family if family is None else get_family(family)
        return X.layers, fam
    A = np.asarray(X, dtype=float)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"expected layers of shape (T, n, n), got {A.shape}")
    if A.shape[0] < 2:
        raise ValueError("at least two layers are required")
    if not np.all(np.isfinite(A)):
        raise ValueError("layers contain non-finite values")
    if not np.allclose(A, A.transpose(0, 2, 1), rtol=0, atol=1e-12):
        raise ValueError("layers must be symmetric")
    fam = get_family("gaussian" if family is None else family)
    if validate_support and not fam.check_support(A):
        raise ValueError(f"layer values are not valid {fam.name} observations")
    return A, fam


def check_dims(n_shared, n_individual, T, n):
    dims = [int(n_individual)] * T if np.isscalar(n_individual) else [int(d) for d in n_individual]
    if len(dims) != T:
        raise ValueError(f"n_individual has {len(dims)} entries for {T} layers")
    if n_shared < 1 or min(dims) < 0:
        raise ValueError("latent dimensions must be non-negative (k >= 1)")
    for t, kt in enumerate(dims):
        if n_shared + kt > n:
            raise ValueError(f"layer {t}: k + k_t = {n_shared + kt} exceeds n = {n}")
    return dims


class SharedLatentSpaceModel(BaseEstimator):
    """Shared/individual latent space model for multiplex networks.

    Layer ``t`` has natural parameters ``Z Z^T + W_t W_t^T``. Fitting runs
    three stages: a per-layer projected gradient fit, a spectral split into
    shared and individual parts, and joint likelihood refinement finished by
    a one-step score update.

    Parameters
    ----------
    n_shared : int
        Shared dimension ``k``.
    n_individual : int or list of int
        Layer dimensions ``k_t``.
    family : {'gaussian', 'bernoulli', 'poisson'}
    tau1 : float or None
        Screening threshold; ``None`` means ``sqrt(2 log n)``.
    M1 : float or None
        Row-norm bound for the projection steps. ``None`` disables projection.
    eta, max_iter : float, int
        Step constant and iteration budget of the joint refinement.
    bb_steps : bool
        Barzilai-Borwein step lengths in the joint refinement.
    single_eta, single_max_iter, single_tol
        Settings of the per-layer fits.
    one_step : bool
        Apply the final one-step update.
    anchors : {'hunt', 'pgd'}
        Which estimate fixes the anchored half of the pseudo-likelihood.
    use_pseudo : bool
        One-step update from the pseudo-likelihood (block diagonal
        information) rather than the full likelihood.
    pinv_rel_tol : float or None
    validate_support : bool
        Reject Bernoulli/Poisson input with invalid values.

    Attributes
    ----------
    Z_ : ndarray of shape (n, k)
    W_ : list of ndarray of shape (n, k_t)
    factors_ : LatentFactors
    report_ : FitReport
    """

    def __init__(self, n_shared=2, n_individual=2, family="gaussian", tau1=None, M1=None,
                 eta=1.0, max_iter=1000, bb_steps=True, single_eta=1.0, single_max_iter=2000,
                 single_tol=1e-9, one_step=True, anchors="hunt", use_pseudo=True,
                 pinv_rel_tol=None, validate_support=True):
        self.n_shared = n_shared
        self.n_individual = n_individual
        self.family = family
        self.tau1 = tau1
        self.M1 = M1
        self.eta = eta
        self.max_iter = max_iter
        self.bb_steps = bb_steps
        self.single_eta = single_eta
        self.single_max_iter = single_max_iter
        self.single_tol = single_tol
        self.one_step = one_step
        self.anchors = anchors
        self.use_pseudo = use_pseudo
        self.pinv_rel_tol = pinv_rel_tol
        self.validate_support = validate_support

    def _refine_config(self, M1):
        return RefineConfig(eta=self.eta, R=self.max_iter, M1=M1, use_pseudo=self.use_pseudo,
                            bb_steps=self.bb_steps, pinv_rel_tol=self.pinv_rel_tol,
                            project=np.isfinite(M1), anchors=self.anchors)

    def fit(self, X, y=None, stages=("hunt", "pgd", "onestep")):
        A, fam = check_multiplex(X, self.family, self.validate_support)
        T, n = A.shape[0], A.shape[1]
        k = int(self.n_shared)
        dims = check_dims(k, self.n_individual, T, n)
        M1 = np.inf if self.M1 is None else float(self.M1)
        tau1 = default_tau1(n) if self.tau1 is None else float(self.tau1)
        rep = FitReport(M1=M1, tau1=tau1)

        t0 = time.perf_counter()
        for t in range(T):
            # rows of [Z, W_t] have norm at most sqrt(2) M1 when both blocks obey M1
            M1_t = np.sqrt(2.0) * M1 if dims[t] else M1
            cfg = SingleFitConfig(d=k + dims[t], eta=self.single_eta,
                                  max_iter=self.single_max_iter, M1=M1_t, tol=self.single_tol)
            Y, tr = fit_individual(A[t], cfg, fam, return_trace=True)
            rep.individual.append(Y)
            rep.single_traces.append(tr)
        rep.timings["individual"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        Z, W, S = hunt_shared(rep.individual, k, dims, tau1)
        rep.screening = S
        current = LatentFactors(Z, tuple(W))
        rep.stages["hunt"] = current
        rep.timings["hunt"] = time.perf_counter() - t0

        cfg = self._refine_config(M1)
        if "pgd" in stages or "onestep" in stages:
            t0 = time.perf_counter()
            current, rep.pgd_trace = pgd_refine(current, A, fam, cfg, return_trace=True)
            rep.stages["pgd"] = current
            rep.timings["pgd"] = time.perf_counter() - t0
        if self.one_step and "onestep" in stages:
            t0 = time.perf_counter()
            anchors = rep.stages["hunt"] if self.anchors == "hunt" else rep.stages["pgd"]
            current = one_step_update(current, anchors, A, fam, cfg)
            rep.stages["onestep"] = current
            rep.timings["onestep"] = time.perf_counter() - t0

        self.factors_ = current
        self.Z_ = current.Z
        self.W_ = list(current.W)
        self.family_ = fam
        self.dims_ = dims
        self.report_ = rep
        return self

    def fit_transform(self, X, y=None):
        """Fit and return the shared factor ``Z_``."""
        return self.fit(X).Z_

    def natural_parameters(self):
        check_is_fitted(self, "factors_")
        ZZ = self.Z_ @ self.Z_.T
        return np.stack([ZZ + Wt @ Wt.T for Wt in self.W_])

    def predict(self, X=None):
        """Expected edge weights ``nu'(Theta_t)``, shape ``(T, n, n)``."""
        return self.family_.mean(self.natural_parameters())

    def score(self, X, y=None):
        """Joint log-likelihood of ``X`` under the fitted factors."""
        check_is_fitted(self, "factors_")
        A, _ = check_multiplex(X, self.family_, self.validate_support)
        return joint_loglik(self.factors_, A, self.family_)
