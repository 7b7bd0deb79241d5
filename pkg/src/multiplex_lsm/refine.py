"""Stage three: joint likelihood refinement and the one-step score update."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .expfam import FamilyLike, get_family
from .netdata import LatentFactors, MultiplexNetwork
from .single import NumericalError, pair_sum, project_rows

_ROUNDING_SLACK = 1e-13


@dataclass
class RefineConfig:
    """Settings for :func:`pgd_refine` and :func:`one_step_update`.

    Step sizes are ``eta / (n T)`` for ``Z`` and ``eta / n`` for each ``W_t``.
    With ``bb_steps`` these are only seeds: each block then takes a
    Barzilai-Borwein step clipped to ``[0.01, 100]`` times its seed.
    """

    eta: float = 1.0
    R: int = 1000
    M1: float = np.inf
    use_pseudo: bool = True
    bb_steps: bool = True
    pinv_rel_tol: float | None = None
    project: bool = True
    backtrack: bool = True
    tol: float = 1e-10
    patience: int = 20
    anchors: str = "hunt"

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.pinv_rel_tol is not None and not 0 < self.pinv_rel_tol < 1:
            raise ValueError("pinv_rel_tol must lie in (0, 1)")
        if self.anchors not in ("hunt", "pgd"):
            raise ValueError("anchors must be 'hunt' or 'pgd'")


def as_layers(A) -> np.ndarray:
    if isinstance(A, MultiplexNetwork):
        return A.layers
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    return A


# --- parameter vector layout: [z_1..z_n, w_{1,1}..w_{1,n}, ..., w_{T,n}] ----

def pack(f: LatentFactors) -> np.ndarray:
    return np.concatenate([f.Z.ravel()] + [Wt.ravel() for Wt in f.W])


def unpack(v, n: int, k: int, dims) -> LatentFactors:
    v = np.asarray(v, dtype=float)
    expected = n * (k + sum(dims))
    if v.shape != (expected,):
        raise ValueError(f"vector of length {v.size} does not match n(k + k_sum) = {expected}")
    Z = v[:n * k].reshape(n, k)
    W, pos = [], n * k
    for kt in dims:
        W.append(v[pos:pos + n * kt].reshape(n, kt))
        pos += n * kt
    return LatentFactors(Z, tuple(W))


def _node_vectors(Z, W):
    """Per-node stacked parameters ``[z_i, w_{1,i}, ..., w_{T,i}]``, shape (n, p)."""
    return np.hstack([Z] + list(W))


def _from_node_vectors(V, k, dims):
    Z = V[:, :k]
    W, pos = [], k
    for kt in dims:
        W.append(V[:, pos:pos + kt])
        pos += kt
    return LatentFactors(Z, tuple(W))


# --- full likelihood --------------------------------------------------------

def _lik_grad(Z, W, A, fam, grad=True):
    ZZ = Z @ Z.T
    lik = 0.0
    Rsum = np.zeros_like(ZZ) if grad else None
    gW = []
    for t, Wt in enumerate(W):
        theta = ZZ + Wt @ Wt.T
        lik += pair_sum(A[t] * theta - fam.nu_(theta))
        if grad:
            R = A[t] - fam.mean_(theta)
            Rsum += R
            gW.append(R @ Wt + R.diagonal()[:, None] * Wt)
    if not grad:
        return float(lik)
    gZ = Rsum @ Z + Rsum.diagonal()[:, None] * Z
    return float(lik), gZ, gW


def joint_loglik(f: LatentFactors, A, fam: FamilyLike) -> float:
    """Multiplex log-likelihood summed over layers and pairs ``i <= j``."""
    A = as_layers(A)
    if A.shape[0] != f.T or A.shape[1] != f.n:
        raise ValueError("factor and network dimensions disagree")
    return _lik_grad(f.Z, f.W, A, get_family(fam), grad=False)


def grad_joint(f: LatentFactors, A, fam: FamilyLike):
    """``(dl/dZ, [dl/dW_t])`` of :func:`joint_loglik`."""
    A = as_layers(A)
    _, gZ, gW = _lik_grad(f.Z, f.W, A, get_family(fam))
    return gZ, gW


def pgd_refine(init: LatentFactors, A, fam: FamilyLike, cfg: RefineConfig | None = None,
               return_trace: bool = False):
    """Projected gradient ascent on the joint likelihood.

    Runs at most ``cfg.R`` iterations of simultaneous ``Z``/``W_t`` steps,
    each followed by projection onto the row-norm ball of radius ``cfg.M1``.
    Exits early once the relative likelihood change stays below ``cfg.tol``
    for ``cfg.patience`` consecutive iterations.
    """
    cfg = cfg or RefineConfig()
    fam = get_family(fam)
    A = as_layers(A)
    n, T = init.n, init.T
    if A.shape[0] != T or A.shape[1] != n:
        raise ValueError("factor and network dimensions disagree")
    proj = (lambda X: project_rows(X, cfg.M1)) if cfg.project else (lambda X: X)

    blocks = [proj(init.Z.copy())] + [proj(Wt.copy()) for Wt in init.W]
    seeds = np.array([cfg.eta / (n * T)] + [cfg.eta / n] * T)
    lik, gZ, gW = _lik_grad(blocks[0], blocks[1:], A, fam)
    if not np.isfinite(lik):
        raise NumericalError("non-finite likelihood at initialisation", 0)
    grads = [gZ] + gW
    trace = [lik]
    prev_blocks = prev_grads = None
    quiet = 0
    for it in range(1, cfg.R + 1):
        steps = seeds.copy()
        if cfg.bb_steps and prev_blocks is not None:
            for b in range(len(blocks)):
                s = blocks[b] - prev_blocks[b]
                y = grads[b] - prev_grads[b]
                curv = -np.vdot(s, y)
                if curv > 0:
                    steps[b] = np.clip(np.vdot(s, s) / curv, 0.01 * seeds[b], 100 * seeds[b])
        # decreases at rounding level count as ascent so converged runs do not
        # fall into step-halving loops decided by floating-point noise
        floor = lik - _ROUNDING_SLACK * abs(lik)
        for _ in range(31 if cfg.backtrack else 1):
            cand = [proj(X + a * g) for X, a, g in zip(blocks, steps, grads)]
            new, cgZ, cgW = _lik_grad(cand[0], cand[1:], A, fam)
            if not cfg.backtrack or (np.isfinite(new) and new >= floor):
                break
            steps *= 0.5
        else:
            break
        if not np.isfinite(new):
            raise NumericalError("non-finite likelihood", it)
        change = abs(new - lik) / max(abs(lik), 1e-300)
        prev_blocks, prev_grads = blocks, grads
        blocks, grads, lik = cand, [cgZ] + cgW, new
        trace.append(lik)
        quiet = quiet + 1 if change < cfg.tol else 0
        if quiet >= cfg.patience:
            break
    out = LatentFactors(blocks[0], tuple(blocks[1:]))
    return (out, np.array(trace)) if return_trace else out


# --- pseudo-likelihood with anchored half ----------------------------------

def _check_pair(f, anchors):
    if f.n != anchors.n or f.k != anchors.k or f.dims != anchors.dims:
        raise ValueError("factors and anchors must have matching dimensions")


def _pseudo_theta(f, anchors, t):
    return f.Z @ anchors.Z.T + f.W[t] @ anchors.W[t].T


def pseudo_loglik(f: LatentFactors, anchors: LatentFactors, A, fam: FamilyLike) -> float:
    """Log-likelihood over all ordered ``(i, j)`` with ``z_j, w_{t,j}`` fixed at anchors."""
    _check_pair(f, anchors)
    A, fam = as_layers(A), get_family(fam)
    total = 0.0
    for t in range(f.T):
        theta = _pseudo_theta(f, anchors, t)
        total += float(np.sum(A[t] * theta - fam.nu_(theta)))
    return total


def _pseudo_grad(f, anchors, A, fam):
    gZ = np.zeros_like(f.Z)
    gW = []
    for t in range(f.T):
        R = A[t] - fam.mean_(_pseudo_theta(f, anchors, t))
        gZ += R @ anchors.Z
        gW.append(R @ anchors.W[t])
    return gZ, gW


def pseudo_score(f: LatentFactors, anchors: LatentFactors, A, fam: FamilyLike) -> np.ndarray:
    """Gradient of :func:`pseudo_loglik`, packed in parameter-vector layout."""
    _check_pair(f, anchors)
    gZ, gW = _pseudo_grad(f, anchors, as_layers(A), get_family(fam))
    return pack(LatentFactors(gZ, tuple(gW)))


def _outer_rows(X, Y):
    return (X[:, :, None] * Y[:, None, :]).reshape(X.shape[0], -1)


def fisher_blocks(f: LatentFactors, anchors: LatentFactors, fam: FamilyLike) -> np.ndarray:
    """Per-node information matrices of the pseudo-likelihood, shape ``(n, p, p)``.

    ``p = k + sum(k_t)``. Node ``i`` gets ``sum_t sum_j nu''(theta_tij) u u^T``
    where ``u`` holds the anchor ``z_j`` in the shared slot and the anchor
    ``w_{t,j}`` in layer ``t``'s slot.
    """
    _check_pair(f, anchors)
    fam = get_family(fam)
    n, k, dims = f.n, f.k, f.dims
    p = k + sum(dims)
    out = np.zeros((n, p, p))
    Za = anchors.Z
    pos = k
    for t, kt in enumerate(dims):
        D = fam.var_(_pseudo_theta(f, anchors, t))
        Wa = anchors.W[t]
        out[:, :k, :k] += (D @ _outer_rows(Za, Za)).reshape(n, k, k)
        zw = (D @ _outer_rows(Za, Wa)).reshape(n, k, kt)
        out[:, :k, pos:pos + kt] = zw
        out[:, pos:pos + kt, :k] = zw.transpose(0, 2, 1)
        out[:, pos:pos + kt, pos:pos + kt] = (D @ _outer_rows(Wa, Wa)).reshape(n, kt, kt)
        pos += kt
    return out


def fisher_block(i: int, f: LatentFactors, anchors: LatentFactors, fam: FamilyLike) -> np.ndarray:
    """Information matrix for node ``i`` (see :func:`fisher_blocks`)."""
    fam = get_family(fam)
    k, dims = f.k, f.dims
    p = k + sum(dims)
    I = np.zeros((p, p))
    pos = k
    for t, kt in enumerate(dims):
        d = fam.var_(f.Z[i] @ anchors.Z.T + f.W[t][i] @ anchors.W[t].T)
        U = np.zeros((f.n, p))
        U[:, :k] = anchors.Z
        U[:, pos:pos + kt] = anchors.W[t]
        I += (U * d[:, None]).T @ U
        pos += kt
    return I


def _default_rtol(cfg, p):
    return cfg.pinv_rel_tol if cfg.pinv_rel_tol is not None else 1e-10 * p


def one_step_update(check: LatentFactors, anchors: LatentFactors, A, fam: FamilyLike,
                    cfg: RefineConfig | None = None) -> LatentFactors:
    """``v + I(v)^+ score(v)`` applied to the refined estimate ``check``.

    With ``cfg.use_pseudo`` (default) the score and information come from
    the anchored pseudo-likelihood, so the information matrix is block
    diagonal over nodes and each node is updated independently. Otherwise
    the full-likelihood score and the dense ``n(k + k_sum)`` square
    information matrix are used, which is only practical for small ``n``.
    Singular values below ``pinv_rel_tol`` times the largest are discarded
    in the pseudo-inverse.
    """
    cfg = cfg or RefineConfig()
    fam = get_family(fam)
    A = as_layers(A)
    if not cfg.use_pseudo:
        return _full_one_step(check, A, fam, cfg)
    _check_pair(check, anchors)
    k, dims = check.k, check.dims
    p = k + sum(dims)
    gZ, gW = _pseudo_grad(check, anchors, A, fam)
    scores = _node_vectors(gZ, gW)
    info = fisher_blocks(check, anchors, fam)
    V = _node_vectors(check.Z, check.W).copy()
    zero = np.all(info.reshape(info.shape[0], -1) == 0, axis=1)
    if zero.any():
        warnings.warn(f"zero information block at nodes {np.flatnonzero(zero).tolist()}; "
                      "left unchanged", RuntimeWarning, stacklevel=2)
    live = ~zero
    if live.any():
        pinv = np.linalg.pinv(info[live], rcond=_default_rtol(cfg, p), hermitian=True)
        V[live] += np.einsum("iab,ib->ia", pinv, scores[live])
    if not np.all(np.isfinite(V)):
        raise NumericalError("non-finite one-step update")
    return _from_node_vectors(V, k, dims)


def full_fisher(f: LatentFactors, fam: FamilyLike) -> np.ndarray:
    """Information matrix of the full joint likelihood in packed layout."""
    fam = get_family(fam)
    n, k, dims = f.n, f.k, f.dims
    p = n * (k + sum(dims))
    if p > 6000:
        raise ValueError(f"dense information matrix of size {p} is too large")
    iu, ju = np.triu_indices(n)
    m = iu.size
    I = np.zeros((p, p))
    offsets = np.cumsum([n * k] + [n * kt for kt in dims])
    for t, kt in enumerate(dims):
        theta = f.Z @ f.Z.T + f.W[t] @ f.W[t].T
        d = fam.var_(theta[iu, ju])
        J = np.zeros((m, p))
        for X, start, width in ((f.Z, 0, k), (f.W[t], offsets[t], kt)):
            rows = np.arange(m)
            for c in range(width):
                # d theta_ij / d x_i = x_j and / d x_j = x_i; doubled on the diagonal
                np.add.at(J, (rows, start + iu * width + c), X[ju, c])
                np.add.at(J, (rows, start + ju * width + c), X[iu, c])
        I += (J * d[:, None]).T @ J
    return I


def _full_one_step(check, A, fam, cfg):
    gZ, gW = grad_joint(check, A, fam)
    score = pack(LatentFactors(gZ, tuple(gW)))
    I = full_fisher(check, fam)
    if not np.any(I):
        warnings.warn("zero information matrix; estimate left unchanged", RuntimeWarning, stacklevel=3)
        return check
    v = pack(check) + np.linalg.pinv(I, rcond=_default_rtol(cfg, I.shape[0]), hermitian=True) @ score
    return unpack(v, check.n, check.k, check.dims)
