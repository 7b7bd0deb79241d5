"""Ground-truth factors with a prescribed scaled Gram matrix, and networks.

The target Gram matrix of ``[Z, W_1, ..., W_T]`` is ``kron(Omega, I_k) /
(2 sqrt(k))`` where ``Omega`` is one of three correlation designs:

* ``A``: identity, all factor columns mutually orthogonal;
* ``B``: shared/individual correlation ``phi`` and compound-symmetric
  individual correlation ``rho``;
* ``C``: the last ``T - T_o`` individual factors are identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expfam import FamilyLike, get_family
from .netdata import LatentFactors, MultiplexNetwork, theta_from_factors


def as_generator(random_state=None) -> np.random.Generator:
    """Coerce ``None``, an int, a SeedSequence or a Generator to a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, np.random.RandomState):
        raise TypeError("legacy RandomState is not supported; pass a Generator or seed")
    return np.random.default_rng(random_state)


def derive_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for a counter tuple, e.g. ``(T, replicate)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class GramDesign:
    case: str
    T: int
    k: int
    phi: float = 0.1
    rho: float = 0.3
    T_o: int = 4

    def __post_init__(self):
        case = str(self.case).upper()
        object.__setattr__(self, "case", case)
        if case not in ("A", "B", "C"):
            raise ValueError(f"unknown design case {self.case!r}")
        if self.T < 1 or self.k < 1:
            raise ValueError("T and k must be positive")
        if case == "C" and not (0 <= self.T_o < self.T):
            raise ValueError(f"case C needs 0 <= T_o < T (got T_o={self.T_o}, T={self.T})")

    def omega(self) -> np.ndarray:
        return build_omega(self)

    def target_gram(self) -> np.ndarray:
        return np.kron(self.omega(), np.eye(self.k)) / (2.0 * np.sqrt(self.k))


def _compound_symmetry(m, rho):
    return (1.0 - rho) * np.eye(m) + rho * np.ones((m, m))


def build_omega(d: GramDesign) -> np.ndarray:
    T = d.T
    if d.case == "A":
        omega = np.eye(1 + T)
    elif d.case == "B":
        omega = np.empty((1 + T, 1 + T))
        omega[0, 0] = 1.0
        omega[0, 1:] = omega[1:, 0] = d.phi
        omega[1:, 1:] = _compound_symmetry(T, d.rho)
    else:
        omega = np.zeros((1 + T, 1 + T))
        m = 1 + d.T_o
        omega[:m, :m] = np.eye(m)
        omega[m:, m:] = 1.0
    lam_min = np.linalg.eigvalsh(omega).min()
    if lam_min < -1e-12:
        raise ValueError(f"Omega is not positive semidefinite (min eigenvalue {lam_min:.3g})")
    return omega


def sample_raw_factors(n: int, k: int, T: int, random_state=None) -> np.ndarray:
    """Rows of ``k``-blocks drawn from N(0, I_k) truncated to ``||x||^2 <= k``.

    Returns an ``n x k(1+T)`` matrix. Sampling is by rejection.
    """
    blocks = n * (1 + T)
    if n <= k * (1 + T):
        raise ValueError(f"need n > k(1+T) = {k * (1 + T)}, got n={n}")
    rng = as_generator(random_state)
    out = np.empty((0, k))
    while out.shape[0] < blocks:
        need = blocks - out.shape[0]
        x = rng.standard_normal((2 * need + 16, k))
        x = x[np.einsum("ij,ij->i", x, x) <= k]
        out = np.vstack([out, x[:need]])
    # block b of node i sits at columns [b*k, (b+1)*k)
    return out.reshape(n, (1 + T) * k)


def _sym_power(G, power, clamp):
    lam, U = np.linalg.eigh((G + G.T) / 2)
    if clamp:
        # rounding-level eigenvalues of a singular target are treated as exact zeros
        lam = np.where(lam > 1e-12 * max(lam.max(), 0.0), lam, 0.0)
    elif lam.min() <= 0:
        raise np.linalg.LinAlgError("raw Gram matrix is singular")
    return (U * lam ** power) @ U.T


def impose_gram(raw: np.ndarray, d: GramDesign) -> LatentFactors:
    """Linearly transform ``raw`` so its scaled Gram matrix equals the target.

    ``X = raw G_raw^{-1/2} G^{1/2}``; the target root uses eigenvalues
    clamped at zero because case C's target is singular.
    """
    n, p = raw.shape
    if p != d.k * (1 + d.T):
        raise ValueError(f"raw has {p} columns, design needs {d.k * (1 + d.T)}")
    G_raw = raw.T @ raw / n
    X = raw @ _sym_power(G_raw, -0.5, clamp=False) @ _sym_power(d.target_gram(), 0.5, clamp=True)
    k = d.k
    return LatentFactors(X[:, :k], tuple(X[:, (1 + t) * k:(2 + t) * k] for t in range(d.T)))


def generate_factors(n: int, d: GramDesign, random_state=None) -> LatentFactors:
    return impose_gram(sample_raw_factors(n, d.k, d.T, random_state), d)


def row_bound(f: LatentFactors, slack: float = 1.05) -> float:
    """Row-norm radius for the constraint sets: ``slack`` times the largest row."""
    return slack * f.max_row_norm()


def generate_networks(f: LatentFactors, fam: FamilyLike, random_state=None) -> MultiplexNetwork:
    """Sample each layer's upper triangle independently and mirror it.

    Layer ``t`` uses the ``t``-th child stream spawned from ``random_state``.
    """
    fam = get_family(fam)
    rng = as_generator(random_state)
    theta = theta_from_factors(f)
    n = f.n
    iu = np.triu_indices(n)
    A = np.zeros_like(theta)
    for t, child in enumerate(rng.spawn(f.T)):
        vals = fam.sample(theta[t][iu], child)
        A[t][iu] = vals
        A[t].T[iu] = vals
    return MultiplexNetwork(A, fam)


def mean_networks(f: LatentFactors, fam: FamilyLike) -> np.ndarray:
    """Noiseless edge means ``nu'(Theta_t)`` (not valid Bernoulli/Poisson data)."""
    fam = get_family(fam)
    return fam.mean(theta_from_factors(f))
