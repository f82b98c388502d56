"""Smooth coefficient functions f: R^e -> R with multi-index partials.

Every family exposes ``value`` and ``partial`` vectorized over a
trailing-point layout ``(..., e)``; ``partial`` takes a multi-index of
the same length e.  ``ExponentialVol`` and ``PolynomialVol`` have exact
derivatives of all orders; ``TabulatedVol`` wraps a black-box callable
and differentiates by nested central differences, which is only good
for low orders and is meant for quick experiments, not bound
computations.
"""

from __future__ import annotations

import dataclasses
from math import factorial

import numpy as np

from .core import midx_degree, midx_leq, midx_sub
from .exceptions import ConfigurationError, DomainError


class VolFunction:
    """Base class; subclasses set ``e`` and implement value/partial."""

    e: int

    def value(self, x):
        raise NotImplementedError

    def partial(self, i, x):
        raise NotImplementedError

    def _check_points(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0 or x.shape[-1] != self.e:
            raise DomainError(f"points must have trailing dimension {self.e}")
        return x

    def _check_index(self, i):
        i = tuple(int(v) for v in i)
        if len(i) != self.e or any(v < 0 for v in i):
            raise DomainError(f"bad multi-index {i} for dimension {self.e}")
        return i

    # Scalar restriction to the first coordinate (others held at 0),
    # used by the variational solver.
    def value_first(self, v):
        v = np.asarray(v, dtype=np.float64)
        x = np.zeros(v.shape + (self.e,))
        x[..., 0] = v
        return self.value(x)

    def partial_first(self, v):
        v = np.asarray(v, dtype=np.float64)
        x = np.zeros(v.shape + (self.e,))
        x[..., 0] = v
        i = (1,) + (0,) * (self.e - 1)
        return self.partial(i, x)


@dataclasses.dataclass(frozen=True)
class ConstantVol(VolFunction):
    """f(x) = c."""

    c: float
    e: int = 2

    def value(self, x):
        x = self._check_points(x)
        return np.full(x.shape[:-1], float(self.c))

    def partial(self, i, x):
        i = self._check_index(i)
        x = self._check_points(x)
        if midx_degree(i) == 0:
            return self.value(x)
        return np.zeros(x.shape[:-1])


@dataclasses.dataclass(frozen=True)
class ExponentialVol(VolFunction):
    """f(x) = xi * exp(coeffs . x); every partial is f times a constant."""

    xi: float
    coeffs: tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) < 1:
            raise ConfigurationError("need at least one coefficient")

    @property
    def e(self):
        return len(self.coeffs)

    def value(self, x):
        x = self._check_points(x)
        return float(self.xi) * np.exp(x @ np.asarray(self.coeffs))

    def partial(self, i, x):
        i = self._check_index(i)
        scale = 1.0
        for c, k in zip(self.coeffs, i):
            scale *= c ** k
        return scale * self.value(x)


@dataclasses.dataclass(frozen=True)
class PolynomialVol(VolFunction):
    """f(x) = sum_p terms[p] * x^p over multi-indices p."""

    terms: tuple  # ((multi-index, coefficient), ...)
    e: int

    def __post_init__(self):
        norm = []
        for p, c in self.terms:
            p = tuple(int(v) for v in p)
            if len(p) != self.e or any(v < 0 for v in p):
                raise ConfigurationError(f"bad term index {p}")
            norm.append((p, float(c)))
        object.__setattr__(self, "terms", tuple(norm))

    def value(self, x):
        return self.partial((0,) * self.e, x)

    def partial(self, i, x):
        i = self._check_index(i)
        x = self._check_points(x)
        out = np.zeros(x.shape[:-1])
        for p, c in self.terms:
            if not midx_leq(i, p):
                continue
            scale = c
            for pl, il in zip(p, i):
                scale *= factorial(pl) / factorial(pl - il)
            mono = np.ones(x.shape[:-1])
            for axis, exp in enumerate(midx_sub(p, i)):
                if exp:
                    mono = mono * x[..., axis] ** exp
            out = out + scale * mono
        return out


class TabulatedVol(VolFunction):
    """Black-box callable differentiated by nested central differences.

    ``func`` must accept an (..., e) array and return (...).  Cost grows
    as 2^|i| evaluations per partial; accuracy degrades fast with
    order.  Not suitable where high-order derivative bounds matter.
    """

    def __init__(self, func, e: int, h: float = 1e-5):
        if not callable(func):
            raise ConfigurationError("func must be callable")
        if not 0 < h < 1e-1:
            raise ConfigurationError(f"step h out of range: {h}")
        self.func = func
        self.e = int(e)
        self.h = float(h)

    def value(self, x):
        x = self._check_points(x)
        out = np.asarray(self.func(x), dtype=np.float64)
        if out.shape != x.shape[:-1]:
            raise DomainError("func returned wrong shape")
        return out

    def partial(self, i, x):
        i = self._check_index(i)
        x = self._check_points(x)
        return self._partial_rec(i, x)

    def _partial_rec(self, i, x):
        deg = midx_degree(i)
        if deg == 0:
            return self.value(x)
        axis = next(ax for ax, v in enumerate(i) if v > 0)
        lower = tuple(v - 1 if ax == axis else v for ax, v in enumerate(i))
        step = np.zeros(self.e)
        step[axis] = self.h
        return (self._partial_rec(lower, x + step)
                - self._partial_rec(lower, x - step)) / (2.0 * self.h)
