"""One-parameter natural exponential families used for edge weights.

Each family is described by its log-partition function ``nu``; the mean is
``nu'``, the variance ``nu''`` and the canonical link is ``(nu')^{-1}``.
All functions are vectorised over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import expit, logit


class DomainError(ValueError):
    """Raised when an argument lies outside a function's domain."""


def _check_finite(x, name="theta"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite")
    return x


def _as_output(x, like):
    return float(x) if np.ndim(like) == 0 else x


# --- log-partition and derivatives -----------------------------------------

def _gauss_nu(t):
    return 0.5 * t * t


def _gauss_mean(t):
    return t.copy()


def _gauss_var(t):
    return np.ones_like(t)


def _bern_nu(t):
    # max(t, 0) + log1p(exp(-|t|)) never overflows
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _bern_var(t):
    p = expit(t)
    return p * (1.0 - p)


def _pois_nu(t):
    return np.exp(t)


def _gauss_sample(t, rng):
    return t + rng.standard_normal(t.shape)


def _bern_sample(t, rng):
    return (rng.random(t.shape) < expit(t)).astype(float)


def _pois_sample(t, rng):
    # numpy uses inversion for small rates and PTRS rejection for large ones
    return rng.poisson(np.exp(t)).astype(float)


def _gauss_link(mu):
    return mu.copy()


def _bern_link(mu):
    if np.any((mu <= 0.0) | (mu >= 1.0)):
        raise DomainError("Bernoulli link requires mu in (0, 1)")
    return logit(mu)


def _pois_link(mu):
    if np.any(mu <= 0.0):
        raise DomainError("Poisson link requires mu > 0")
    return np.log(mu)


@dataclass(frozen=True)
class ExpFamily:
    """A named exponential family with vectorised ``nu``, ``nu'``, ``nu''``.

    Use the module-level instances :data:`GAUSSIAN`, :data:`BERNOULLI` and
    :data:`POISSON` or :func:`get_family`.
    """

    name: str
    _nu: Callable = None
    _mean: Callable = None
    _var: Callable = None
    _link: Callable = None
    _sample: Callable = None

    def __repr__(self):
        return f"ExpFamily({self.name!r})"

    def __str__(self):
        return self.name

    def log_partition(self, theta):
        t = _check_finite(theta)
        return _as_output(self._nu(t), theta)

    def mean(self, theta):
        t = _check_finite(theta)
        return _as_output(self._mean(t), theta)

    def variance(self, theta):
        t = _check_finite(theta)
        return _as_output(self._var(t), theta)

    def link(self, mu):
        m = np.asarray(mu, dtype=float)
        if np.any(np.isnan(m)):
            raise DomainError("mu must not be NaN")
        return _as_output(self._link(m), mu)

    def sample(self, theta, rng: np.random.Generator):
        t = _check_finite(theta)
        return _as_output(self._sample(t, rng), theta)

    # Unchecked array versions for inner loops where inputs are known finite.
    def nu_(self, theta):
        return self._nu(theta)

    def mean_(self, theta):
        return self._mean(theta)

    def var_(self, theta):
        return self._var(theta)

    def check_support(self, x):
        """Return True if all values in ``x`` are valid observations."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return False
        if self.name == "bernoulli":
            return bool(np.all((x == 0) | (x == 1)))
        if self.name == "poisson":
            return bool(np.all((x >= 0) & (x == np.round(x))))
        return True


GAUSSIAN = ExpFamily("gaussian", _gauss_nu, _gauss_mean, _gauss_var,
                     _gauss_link, _gauss_sample)
BERNOULLI = ExpFamily("bernoulli", _bern_nu, expit, _bern_var,
                      _bern_link, _bern_sample)
POISSON = ExpFamily("poisson", _pois_nu, np.exp, np.exp,
                    _pois_link, _pois_sample)

FAMILIES = {f.name: f for f in (GAUSSIAN, BERNOULLI, POISSON)}
_ALIASES = {"normal": "gaussian", "binary": "bernoulli", "count": "poisson",
            "logistic": "bernoulli"}

FamilyLike = Union[str, ExpFamily]


def get_family(family: FamilyLike) -> ExpFamily:
    """Resolve a family name (case-insensitive) or pass an instance through."""
    if isinstance(family, ExpFamily):
        return family
    key = str(family).strip().lower()
    key = _ALIASES.get(key, key)
    try:
        return FAMILIES[key]
    except KeyError:
        raise ValueError(
            f"unknown family {family!r}; expected one of {sorted(FAMILIES)}"
        ) from None


def log_partition(theta, fam: FamilyLike):
    return get_family(fam).log_partition(theta)


def mean(theta, fam: FamilyLike):
    return get_family(fam).mean(theta)


def variance(theta, fam: FamilyLike):
    return get_family(fam).variance(theta)


def link(mu, fam: FamilyLike):
    return get_family(fam).link(mu)


def sample_edge(theta, fam: FamilyLike, rng: np.random.Generator):
    """Draw edge weight(s) with natural parameter ``theta``."""
    return get_family(fam).sample(theta, rng)
