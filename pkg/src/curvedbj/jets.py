"""Truncated bivariate Taylor polynomials ("jets") with array-valued coefficients.

A jet of order N stores the Taylor coefficients c_ij = d1^i d2^j f / (i! j!)
for i + j <= N at every point of a grid. Arithmetic on jets propagates exact
derivatives, which is what the identity checks and manufactured solutions use
in place of hand-expanded chain rules.
"""
from __future__ import annotations

from functools import lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np


@lru_cache(maxsize=None)
def _indices(order: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, d - i) for d in range(order + 1) for i in range(d, -1, -1))


@lru_cache(maxsize=None)
def _position(order: int) -> dict[tuple[int, int], int]:
    return {ij: k for k, ij in enumerate(_indices(order))}


@lru_cache(maxsize=None)
def _product_table(order: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    idx = _indices(order)
    pos = _position(order)
    table = []
    for i, j in idx:
        pairs = []
        for a in range(i + 1):
            for b in range(j + 1):
                pairs.append((pos[(a, b)], pos[(i - a, j - b)]))
        table.append(tuple(pairs))
    return tuple(table)


class Jet:
    """Taylor jet in two variables; ``coef[k]`` is the coefficient of multi-index k."""

    __array_ufunc__ = None

    def __init__(self, coef: np.ndarray, order: int):
        self.coef = coef
        self.order = order

    @classmethod
    def constant(cls, value, order: int, shape=()) -> "Jet":
        coef = np.zeros((len(_indices(order)),) + np.shape(np.broadcast_to(value, shape)))
        coef[0] = value
        return cls(coef, order)

    @classmethod
    def variables(cls, z1, z2, order: int) -> tuple["Jet", "Jet"]:
        z1, z2 = np.broadcast_arrays(np.asarray(z1, float), np.asarray(z2, float))
        pos = _position(order)
        out = []
        for axis, z in enumerate((z1, z2)):
            coef = np.zeros((len(pos),) + z.shape)
            coef[0] = z
            if order >= 1:
                coef[pos[(1, 0) if axis == 0 else (0, 1)]] = 1.0
            out.append(cls(coef, order))
        return out[0], out[1]

    @property
    def value(self) -> np.ndarray:
        return self.coef[0]

    def truncate(self, order: int) -> "Jet":
        if order == self.order:
            return self
        return Jet(self.coef[: len(_indices(order))], order)

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.order, np.shape(self.value))

    def __add__(self, other):
        other = self._coerce(other)
        n = min(self.order, other.order)
        return Jet(self.truncate(n).coef + other.truncate(n).coef, n)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coef, self.order)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coef * other, self.order)
        n = min(self.order, other.order)
        a, b = self.truncate(n).coef, other.truncate(n).coef
        out = np.empty(np.broadcast_shapes(a.shape, b.shape))
        for k, pairs in enumerate(_product_table(n)):
            out[k] = sum(a[p] * b[q] for p, q in pairs)
        return Jet(out, n)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.coef / other, self.order)
        return self * other.reciprocal()

    def reciprocal(self) -> "Jet":
        v = self.value
        return self.compose([(-1) ** k * factorial(k) / v ** (k + 1) for k in range(self.order + 1)])

    def diff(self, axis: int) -> "Jet":
        """Partial derivative; the result has order one lower."""
        if self.order == 0:
            raise ValueError("cannot differentiate a jet of order 0")
        n = self.order - 1
        pos = _position(self.order)
        out = np.empty((len(_indices(n)),) + self.coef.shape[1:])
        for k, (i, j) in enumerate(_indices(n)):
            if axis == 0:
                out[k] = (i + 1) * self.coef[pos[(i + 1, j)]]
            else:
                out[k] = (j + 1) * self.coef[pos[(i, j + 1)]]
        return Jet(out, n)

    def compose(self, derivs: Sequence[np.ndarray]) -> "Jet":
        """Jet of f(self) given f^(k) at self.value for k = 0..order."""
        du = Jet(self.coef.copy(), self.order)
        du.coef[0] = 0.0
        result = Jet.constant(0.0, self.order, np.shape(self.value))
        power = Jet.constant(1.0, self.order, np.shape(self.value))
        for k in range(self.order + 1):
            result = result + power * (np.asarray(derivs[k]) / factorial(k))
            power = power * du
        return result


def _trig_derivs(x: np.ndarray, order: int, fn: str) -> list[np.ndarray]:
    s, c = np.sin(x), np.cos(x)
    cycle = [s, c, -s, -c] if fn == "sin" else [c, -s, -c, s]
    return [cycle[k % 4] for k in range(order + 1)]


def sin(u):
    if isinstance(u, Jet):
        return u.compose(_trig_derivs(u.value, u.order, "sin"))
    return np.sin(u)


def cos(u):
    if isinstance(u, Jet):
        return u.compose(_trig_derivs(u.value, u.order, "cos"))
    return np.cos(u)


def apply_univariate(u, derivative: Callable[[np.ndarray, int], np.ndarray]):
    """Evaluate f(u) where ``derivative(x, k)`` returns f^(k)(x) in closed form."""
    if isinstance(u, Jet):
        return u.compose([derivative(u.value, k) for k in range(u.order + 1)])
    return derivative(np.asarray(u, float), 0)


def value(u) -> np.ndarray:
    return u.value if isinstance(u, Jet) else np.asarray(u)
