"""Control-polynomial vector fields ``f0(x) + sum_alpha u^alpha f_alpha(x)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

__all__ = ["MultiIndex", "PolyDynamics", "eval_poly", "graded_lex_key"]


@dataclass(frozen=True, order=True)
class MultiIndex:
    exponents: tuple

    def __post_init__(self):
        exps = tuple(int(a) for a in self.exponents)
        if any(a < 0 for a in exps):
            raise ValueError("exponents must be nonnegative")
        object.__setattr__(self, "exponents", exps)

    @property
    def m(self):
        return len(self.exponents)

    @property
    def degree(self):
        return sum(self.exponents)

    @property
    def support(self):
        return tuple(i for i, a in enumerate(self.exponents) if a)

    @property
    def c(self):
        """Number of nonzero exponents."""
        return len(self.support)

    def monomial(self, u):
        u = np.asarray(u, dtype=float)
        out = np.ones(u.shape[:-1])
        for i, a in enumerate(self.exponents):
            if a:
                out = out * u[..., i] ** a
        return out

    def __str__(self):
        return "(" + ",".join(str(a) for a in self.exponents) + ")"


def graded_lex_key(alpha):
    """Order by total degree, then lexicographically (larger leading exponent first)."""
    return (alpha.degree, tuple(-a for a in alpha.exponents))


def _as_index(alpha):
    return alpha if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha))


@dataclass(frozen=True)
class PolyDynamics:
    """Drift plus coefficient fields keyed by multi-index.

    Fields take states of shape ``(..., n)`` and return ``(..., n)``.
    """

    n: int
    m: int
    drift: Callable
    terms: Mapping

    def __post_init__(self):
        terms = {}
        for alpha, fld in dict(self.terms).items():
            alpha = _as_index(alpha)
            if alpha.m != self.m:
                raise ValueError(f"multi-index {alpha} does not have {self.m} entries")
            if alpha.degree < 1:
                raise ValueError("coefficient fields need degree >= 1; put constants in the drift")
            terms[alpha] = fld
        ordered = dict(sorted(terms.items(), key=lambda kv: graded_lex_key(kv[0])))
        object.__setattr__(self, "terms", ordered)

    @property
    def degree(self):
        return max((a.degree for a in self.terms), default=0)

    def field(self, alpha):
        return self.terms[_as_index(alpha)]

    def __call__(self, x, u):
        return eval_poly(self, x, u)

    def with_terms(self, terms, drift=None):
        return PolyDynamics(self.n, self.m, self.drift if drift is None else drift, terms)


def eval_poly(pd, x, u):
    """Evaluate ``f0(x) + sum_alpha u^alpha f_alpha(x)`` with broadcasting."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != pd.n or u.shape[-1] != pd.m:
        raise ValueError(f"dimension mismatch: expected x[..., {pd.n}] and u[..., {pd.m}]")
    shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    out = np.broadcast_to(np.asarray(pd.drift(x), dtype=float), shape + (pd.n,)).copy()
    for alpha, fld in pd.terms.items():
        out = out + alpha.monomial(u)[..., None] * np.asarray(fld(x), dtype=float)
    return out
