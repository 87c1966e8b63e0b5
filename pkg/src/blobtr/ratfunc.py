"""Univariate polynomials and rational functions over the rationals."""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import IrreducibleFactor
from .jets import FUNCTION, INF, LaurentJet
from .rational import ONE, ZERO, to_q

Poly = Tuple  # coefficients lowest degree first, no trailing zeros


def poly(coeffs: Iterable) -> Poly:
    cs = [to_q(c) if not isinstance(c, type(ZERO)) else c for c in coeffs]
    while cs and not cs[-1]:
        cs.pop()
    return tuple(cs)


def p_add(a: Poly, b: Poly) -> Poly:
    n = max(len(a), len(b))
    return poly((a[i] if i < len(a) else ZERO) + (b[i] if i < len(b) else ZERO) for i in range(n))


def p_neg(a: Poly) -> Poly:
    return tuple(-c for c in a)


def p_sub(a: Poly, b: Poly) -> Poly:
    return p_add(a, p_neg(b))


def p_scale(a: Poly, k) -> Poly:
    return poly(c * k for c in a)


def p_mul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return ()
    out = [ZERO] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return poly(out)


def p_divmod(a: Poly, b: Poly) -> Tuple[Poly, Poly]:
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    rem = list(a)
    db = len(b) - 1
    inv = ONE / b[-1]
    q = [ZERO] * max(len(a) - db, 0)
    for i in range(len(a) - 1, db - 1, -1):
        c = rem[i] * inv
        if c:
            q[i - db] = c
            for j in range(db + 1):
                rem[i - db + j] -= c * b[j]
    return poly(q), poly(rem[:db] if db > 0 else [])


def p_gcd(a: Poly, b: Poly) -> Poly:
    while b:
        a, b = b, p_divmod(a, b)[1]
    if not a:
        return ()
    return p_scale(a, ONE / a[-1])


def p_eval(a: Poly, x):
    acc = ZERO
    for c in reversed(a):
        acc = acc * x + c
    return acc


def p_deriv(a: Poly) -> Poly:
    return poly(c * i for i, c in enumerate(a) if i)


def p_taylor(a: Poly, c) -> Poly:
    """Coefficients of a(c + zeta) in zeta."""
    out = list(a)
    n = len(out)
    for i in range(n):
        for j in range(n - 2, i - 1, -1):
            out[j] += c * out[j + 1]
    return poly(out)


def p_pow(a: Poly, k: int) -> Poly:
    out: Poly = (ONE,)
    for _ in range(k):
        out = p_mul(out, a)
    return out


def p_str(a: Poly, var: str = "z") -> str:
    if not a:
        return "0"
    parts = []
    for i, c in enumerate(a):
        if c:
            parts.append(f"{c}" if i == 0 else (f"{c}*{var}" if i == 1 else f"{c}*{var}^{i}"))
    return " + ".join(parts)


class RationalFunction:
    """``num / den`` with coprime numerator and monic denominator."""

    __slots__ = ("num", "den")

    def __init__(self, num, den=(1,)):
        num, den = poly(num), poly(den)
        if not den:
            raise ZeroDivisionError("zero denominator")
        g = p_gcd(num, den) if num else den
        if len(g) > 1:
            num = p_divmod(num, g)[0]
            den = p_divmod(den, g)[0]
        lead = den[-1]
        if lead != 1:
            num = p_scale(num, ONE / lead)
            den = p_scale(den, ONE / lead)
        if not num:
            den = (ONE,)
        self.num = num
        self.den = den

    @classmethod
    def polynomial(cls, coeffs) -> "RationalFunction":
        return cls(coeffs, (1,))

    def __eq__(self, other):
        if not isinstance(other, RationalFunction):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __hash__(self):
        return hash((self.num, self.den))

    def __bool__(self):
        return bool(self.num)

    def __repr__(self):
        return f"({p_str(self.num)}) / ({p_str(self.den)})"

    def __add__(self, other):
        other = _coerce_rf(other)
        return RationalFunction(p_add(p_mul(self.num, other.den), p_mul(other.num, self.den)),
                                p_mul(self.den, other.den))

    __radd__ = __add__

    def __neg__(self):
        return RationalFunction(p_neg(self.num), self.den)

    def __sub__(self, other):
        return self + (-_coerce_rf(other))

    def __rsub__(self, other):
        return _coerce_rf(other) + (-self)

    def __mul__(self, other):
        other = _coerce_rf(other)
        return RationalFunction(p_mul(self.num, other.num), p_mul(self.den, other.den))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce_rf(other)
        return RationalFunction(p_mul(self.num, other.den), p_mul(self.den, other.num))

    def __rtruediv__(self, other):
        return _coerce_rf(other) / self

    def __call__(self, x):
        d = p_eval(self.den, x)
        if not d:
            raise ZeroDivisionError(f"pole at {x}")
        return p_eval(self.num, x) / d

    def derivative(self) -> "RationalFunction":
        n, d = self.num, self.den
        return RationalFunction(p_sub(p_mul(p_deriv(n), d), p_mul(n, p_deriv(d))), p_mul(d, d))

    def is_polynomial(self) -> bool:
        return len(self.den) == 1

    def jet_at(self, c, prec, weight=FUNCTION, base=None) -> LaurentJet:
        """Laurent expansion in ``zeta = z - c`` known to absolute order ``prec``."""
        c = to_q(c)
        base = base if base is not None else (c, "z")
        num = LaurentJet(0, list(p_taylor(self.num, c)), INF, weight, base)
        den = LaurentJet(0, list(p_taylor(self.den, c)), INF, FUNCTION, base)
        if self.is_polynomial():
            return num if prec == INF else num.truncate(prec)
        return num.divide(den, prec)


def _coerce_rf(x) -> RationalFunction:
    if isinstance(x, RationalFunction):
        return x
    return RationalFunction((to_q(x),), (1,))


def rational_roots(p: Poly) -> List:
    """Distinct rational roots of a polynomial with rational coefficients."""
    if len(p) <= 1:
        return []
    import sympy

    z = sympy.Symbol("z")
    expr = sum(sympy.Rational(int(c.numerator), int(c.denominator)) * z ** i for i, c in enumerate(p))
    roots = sympy.Poly(expr, z).ground_roots()
    return sorted(to_q(f"{r.p}/{r.q}") for r in roots)


def partial_fractions(r: RationalFunction, poles: Optional[Sequence] = None):
    """Decompose into a polynomial part plus principal parts at the poles.

    Parameters
    ----------
    r : RationalFunction
        The function to decompose.
    poles : sequence of rationals, optional
        Candidate pole locations.  When omitted the rational roots of the
        denominator are searched for.

    Returns
    -------
    (Poly, list of (pole, list))
        Polynomial part and, for each pole ``q`` in increasing order, the list
        ``[c_1, ..., c_m]`` with ``r`` having principal part
        ``sum c_k / (z - q)^k``.

    Raises
    ------
    IrreducibleFactor
        If the denominator does not split over the supplied/located poles.
    """
    den = r.den
    cands = sorted({to_q(q) for q in poles}) if poles is not None else rational_roots(den)
    rest = den
    mult: Dict = {}
    for q in cands:
        lin = (-q, ONE)
        while len(rest) > 1:
            quo, rem = p_divmod(rest, lin)
            if rem:
                break
            rest = quo
            mult[q] = mult.get(q, 0) + 1
    if len(rest) > 1:
        raise IrreducibleFactor(f"denominator factor {p_str(rest)} has no supplied rational root")
    polypart, _ = p_divmod(r.num, den)
    parts = []
    for q in sorted(mult):
        m = mult[q]
        other = p_divmod(den, p_pow((-q, ONE), m))[0]
        g = RationalFunction(r.num, other)
        jet = g.jet_at(q, m)
        parts.append((q, [jet.coefficient(m - k) for k in range(1, m + 1)]))
    return polypart, parts


def reassemble(polypart: Poly, parts) -> RationalFunction:
    out = RationalFunction(polypart, (1,))
    for q, cs in parts:
        for k, c in enumerate(cs, start=1):
            if c:
                out = out + RationalFunction((c,), p_pow((-q, ONE), k))
    return out


__all__ = [
    "poly", "p_add", "p_sub", "p_mul", "p_divmod", "p_gcd", "p_eval", "p_deriv", "p_taylor",
    "p_pow", "RationalFunction", "partial_fractions", "reassemble", "rational_roots",
]
