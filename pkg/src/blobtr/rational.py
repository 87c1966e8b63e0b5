"""Exact scalars: rationals (gmpy2 ``mpq``) and dual numbers with eps**2 = 0."""

from __future__ import annotations

from fractions import Fraction

import gmpy2
from gmpy2 import mpq

Q = mpq
ZERO = mpq(0)
ONE = mpq(1)


def to_q(value) -> mpq:
    """Coerce ints, Fractions, mpq and "p/q" strings to an exact rational."""
    if isinstance(value, type(ZERO)):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return mpq(value)
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        text = value.strip()
        try:
            return mpq(text)
        except ValueError as exc:
            raise ValueError(f"not a rational literal: {value!r}") from exc
    if isinstance(value, float):
        raise TypeError("floating point input is not accepted; use 'p/q' strings")
    raise TypeError(f"cannot interpret {value!r} as a rational")


def q_str(value) -> str:
    """Canonical text form, integers without a denominator."""
    value = to_q(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def is_rational(value) -> bool:
    return isinstance(value, (type(ZERO), int)) and not isinstance(value, bool)


class Dual:
    """a + b*eps with eps**2 = 0, over exact rationals."""

    __slots__ = ("a", "b")

    def __init__(self, a=0, b=0):
        self.a = to_q(a) if not isinstance(a, type(ZERO)) else a
        self.b = to_q(b) if not isinstance(b, type(ZERO)) else b

    @staticmethod
    def lift(x) -> "Dual":
        return x if isinstance(x, Dual) else Dual(x, 0)

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.a + other.a, self.b + other.b)
        return Dual(self.a + other, self.b)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.a - other.a, self.b - other.b)
        return Dual(self.a - other, self.b)

    def __rsub__(self, other):
        return Dual(other - self.a, -self.b)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.a * other.a, self.a * other.b + self.b * other.a)
        return Dual(self.a * other, self.b * other)

    __rmul__ = __mul__

    def inverse(self) -> "Dual":
        if self.a == 0:
            raise ZeroDivisionError("dual number with zero real part is not invertible")
        inv = 1 / self.a
        return Dual(inv, -self.b * inv * inv)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return self * other.inverse()
        return Dual(self.a / other, self.b / other)

    def __rtruediv__(self, other):
        return self.inverse() * other

    def __eq__(self, other):
        if isinstance(other, Dual):
            return self.a == other.a and self.b == other.b
        return self.b == 0 and self.a == other

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return hash((self.a, self.b)) if self.b else hash(self.a)

    def __bool__(self):
        return bool(self.a) or bool(self.b)

    def __repr__(self):
        return f"Dual({q_str(self.a)}, {q_str(self.b)})"


def real_part(x):
    return x.a if isinstance(x, Dual) else x


def eps_part(x):
    return x.b if isinstance(x, Dual) else ZERO


def is_invertible(x) -> bool:
    return (x.a != 0) if isinstance(x, Dual) else (x != 0)


__all__ = [
    "Q", "ZERO", "ONE", "Dual", "to_q", "q_str", "is_rational",
    "real_part", "eps_part", "is_invertible", "gmpy2",
]
