"""Containers, validation and plain-text I/O for multiplex networks."""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .expfam import ExpFamily, FamilyLike, get_family


class FormatError(ValueError):
    """Malformed edge-list or factor file."""


@dataclass(frozen=True)
class MultiplexNetwork:
    """``T`` symmetric ``n x n`` weight matrices on a shared node set.

    ``layers`` is stored as a read-only array of shape ``(T, n, n)``.
    """

    layers: np.ndarray
    family: ExpFamily

    def __post_init__(self):
        A = np.array(self.layers, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("layers must have shape (T, n, n)")
        if not np.array_equal(A, A.transpose(0, 2, 1)):
            raise ValueError("every layer must be symmetric")
        fam = get_family(self.family)
        if not fam.check_support(A):
            raise ValueError(f"layer values are not valid {fam.name} observations")
        A.setflags(write=False)
        object.__setattr__(self, "layers", A)
        object.__setattr__(self, "family", fam)

    @property
    def n(self) -> int:
        return self.layers.shape[1]

    @property
    def T(self) -> int:
        return self.layers.shape[0]


@dataclass(frozen=True)
class LatentFactors:
    """Shared factor ``Z`` (n x k) and layer factors ``W[t]`` (n x k_t)."""

    Z: np.ndarray
    W: tuple = field(default_factory=tuple)

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        if Z.ndim != 2:
            raise ValueError("Z must be 2-d")
        Ws = []
        for t, Wt in enumerate(self.W):
            Wt = np.array(Wt, dtype=float)
            if Wt.ndim == 1 and Wt.size == 0:
                Wt = Wt.reshape(Z.shape[0], 0)
            if Wt.ndim != 2 or Wt.shape[0] != Z.shape[0]:
                raise ValueError(f"W[{t}] must be 2-d with {Z.shape[0]} rows")
            Wt.setflags(write=False)
            Ws.append(Wt)
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "W", tuple(Ws))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def T(self) -> int:
        return len(self.W)

    @property
    def dims(self) -> list:
        return [Wt.shape[1] for Wt in self.W]

    def Y(self, t: int) -> np.ndarray:
        """Concatenated layer factor ``[Z, W_t]``."""
        return np.hstack([self.Z, self.W[t]])

    def max_row_norm(self) -> float:
        norms = [np.linalg.norm(self.Z, axis=1).max(initial=0.0)]
        norms += [np.linalg.norm(Wt, axis=1).max(initial=0.0) for Wt in self.W]
        return float(max(norms))

    def rotate(self, Q, Qs) -> "LatentFactors":
        return LatentFactors(self.Z @ Q, tuple(Wt @ Qt for Wt, Qt in zip(self.W, Qs)))


def theta_from_factors(f: LatentFactors) -> np.ndarray:
    """Natural parameters ``Theta_t = Z Z^T + W_t W_t^T``, shape ``(T, n, n)``."""
    if not isinstance(f, LatentFactors):
        raise TypeError("expected LatentFactors")
    ZZ = f.Z @ f.Z.T
    return np.stack([ZZ + Wt @ Wt.T for Wt in f.W]) if f.T else np.empty((0, f.n, f.n))


# --- identifiability diagnostics -------------------------------------------

@dataclass
class ConditionReport:
    """Row-norm and Gram-matrix diagnostics for a set of factors."""

    M1: float
    z_row_norm: float
    w_row_norms: list
    row_norm_ok: bool
    sigma_min_layers: list
    sigma_min_pairs: dict
    full_rank_layers: bool
    identifiable_pairs: list

    @property
    def identifiable(self) -> bool:
        return self.full_rank_layers and bool(self.identifiable_pairs)


def _sigma_min_gram(X):
    if X.shape[1] == 0:
        return np.inf
    G = X.T @ X / X.shape[0]
    return float(np.linalg.svd(G, compute_uv=False).min())


def validate_conditions(f: LatentFactors, M1: float, rtol: float = 1e-10) -> ConditionReport:
    """Check row-norm bounds and the Gram rank conditions for identifiability.

    A Gram matrix is treated as singular when its smallest singular value is
    below ``rtol`` times its largest.
    """
    zn = float(np.linalg.norm(f.Z, axis=1).max(initial=0.0))
    wn = [float(np.linalg.norm(Wt, axis=1).max(initial=0.0)) for Wt in f.W]
    ok = zn <= M1 and all(w <= M1 for w in wn)

    def rank_ok(X):
        if X.shape[1] == 0:
            return True
        s = np.linalg.svd(X.T @ X / X.shape[0], compute_uv=False)
        return s.min() > rtol * max(s.max(), 1e-300)

    sig_layers = [_sigma_min_gram(f.Y(t)) for t in range(f.T)]
    full = all(rank_ok(f.Y(t)) for t in range(f.T))
    sig_pairs, good = {}, []
    for t, s in itertools.combinations(range(f.T), 2):
        X = np.hstack([f.Z, f.W[t], f.W[s]])
        sig_pairs[(t, s)] = _sigma_min_gram(X)
        if rank_ok(X):
            good.append((t, s))
    return ConditionReport(M1, zn, wn, ok, sig_layers, sig_pairs, full, good)


# --- edge-list files --------------------------------------------------------

def _data_lines(path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def load_multiplex(path, family: FamilyLike | None = None) -> MultiplexNetwork:
    """Read a multiplex edge list.

    The first non-comment line is ``n T family``; each following line is
    ``t i j w`` with 0-based indices. Unlisted pairs have weight 0. An edge may
    be given as ``(i, j)`` or ``(j, i)``; repeating it with a different weight
    is an error.
    """
    lines = _data_lines(path)
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise FormatError(f"{path}: empty file") from None
    if len(head) != 3:
        raise FormatError(f"{path}:{lineno}: header must be 'n T family'")
    try:
        n, T = int(head[0]), int(head[1])
    except ValueError:
        raise FormatError(f"{path}:{lineno}: n and T must be integers") from None
    file_fam = get_family(head[2])
    fam = file_fam if family is None else get_family(family)
    if fam is not file_fam:
        raise FormatError(f"{path}: file family {file_fam} != requested {fam}")

    A = np.zeros((T, n, n))
    seen = {}
    for lineno, tok in lines:
        if len(tok) != 4:
            raise FormatError(f"{path}:{lineno}: expected 't i j w'")
        try:
            t, i, j = int(tok[0]), int(tok[1]), int(tok[2])
            w = float(tok[3])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad number") from None
        if not (0 <= t < T):
            raise FormatError(f"{path}:{lineno}: layer {t} out of range [0, {T})")
        if not (0 <= i < n and 0 <= j < n):
            raise FormatError(f"{path}:{lineno}: node index out of range [0, {n})")
        if fam.name != "gaussian" and w != round(w):
            raise FormatError(f"{path}:{lineno}: non-integer weight {w} in a {fam} layer")
        key = (t, min(i, j), max(i, j))
        if key in seen and seen[key] != w:
            raise FormatError(f"{path}:{lineno}: conflicting weights for edge {key}")
        seen[key] = w
        A[t, i, j] = A[t, j, i] = w
    try:
        return MultiplexNetwork(A, fam)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_multiplex(net: MultiplexNetwork, path) -> None:
    """Write ``net`` as an edge list (upper triangle, non-zero weights only)."""
    with open(path, "w") as fh:
        fh.write(f"{net.n} {net.T} {net.family.name}\n")
        integer = net.family.name != "gaussian"
        for t in range(net.T):
            iu, ju = np.nonzero(np.triu(net.layers[t]))
            for i, j in zip(iu, ju):
                w = net.layers[t, i, j]
                ws = str(int(w)) if integer else repr(float(w))
                fh.write(f"{t} {i} {j} {ws}\n")


# --- factor files -----------------------------------------------------------

def save_matrix(X, path) -> None:
    """Write one factor matrix: header ``n k`` then ``n`` rows."""
    X = np.asarray(X, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{X.shape[0]} {X.shape[1]}\n")
        for row in (X if X.shape[1] else ()):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_matrix(path) -> np.ndarray:
    lines = list(_data_lines(path))
    if not lines or len(lines[0][1]) != 2:
        raise FormatError(f"{path}: header must be 'n k'")
    n, k = int(lines[0][1][0]), int(lines[0][1][1])
    rows = lines[1:]
    if k == 0 and not rows:
        return np.zeros((n, 0))
    if len(rows) != n:
        raise FormatError(f"{path}: expected {n} rows, found {len(rows)}")
    X = np.zeros((n, k))
    for r, (lineno, tok) in enumerate(rows):
        if len(tok) != k:
            raise FormatError(f"{path}:{lineno}: expected {k} values")
        X[r] = [float(v) for v in tok]
    return X


def save_factors(f: LatentFactors, directory) -> list:
    """Write ``Z.txt`` and ``W_<t>.txt`` into ``directory``; return the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = [os.path.join(directory, "Z.txt")]
    save_matrix(f.Z, paths[0])
    for t, Wt in enumerate(f.W):
        p = os.path.join(directory, f"W_{t}.txt")
        save_matrix(Wt, p)
        paths.append(p)
    return paths


def load_factors(directory) -> LatentFactors:
    Z = load_matrix(os.path.join(directory, "Z.txt"))
    W = []
    t = 0
    while os.path.exists(p := os.path.join(directory, f"W_{t}.txt")):
        W.append(load_matrix(p))
        t += 1
    return LatentFactors(Z, tuple(W))
