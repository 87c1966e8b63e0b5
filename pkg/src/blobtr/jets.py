"""Truncated Laurent jets at a marked point.

A jet stores ``sum_{e >= val} c_e zeta**e`` known up to (excluding) the
absolute order ``prec``.  Exact jets have ``prec = INF``.  Coefficients may
be rationals, dual numbers or :class:`~blobtr.series.Series`; anything with
``+``, ``*`` and truth testing works, and division additionally needs an
invertible leading coefficient.

The ``weight`` attribute counts powers of ``sqrt(d zeta)``: 0 for functions,
1 for half-forms and 2 for one-forms.  Products add weights, quotients
subtract them and sums require equal weights.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence

from .errors import (
    BasepointMismatch,
    DivisionByZeroJet,
    KindMismatch,
    NonzeroAnchor,
    NonzeroResidue,
    TruncationInsufficient,
)
from .rational import ONE, ZERO, to_q

INF = math.inf

FUNCTION = 0
HALF_FORM = 1
ONE_FORM = 2

_KIND_NAMES = {FUNCTION: "function", HALF_FORM: "half-form", ONE_FORM: "one-form"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}


def kind_name(weight: int) -> str:
    return _KIND_NAMES.get(weight, f"weight-{weight}")


def _inverse(c):
    inv = getattr(c, "inverse", None)
    if inv is not None:
        return inv()
    return ONE / c


class LaurentJet:
    """Immutable truncated Laurent expansion ``sum c_e zeta^e + O(zeta^prec)``."""

    __slots__ = ("val", "coeffs", "prec", "weight", "base")

    def __init__(self, val: int, coeffs: Sequence, prec=INF, weight: int = FUNCTION,
                 base=(ZERO, "z")):
        if isinstance(weight, str):
            weight = _KIND_CODES[weight]
        cs = list(coeffs)
        if prec != INF:
            keep = prec - val
            if keep < len(cs):
                cs = cs[:max(keep, 0)]
        start = 0
        while start < len(cs) and not cs[start]:
            start += 1
        if start:
            cs = cs[start:]
            val += start
        while cs and not cs[-1]:
            cs.pop()
        if not cs:
            val = prec if prec != INF else 0
        self.val = val
        self.coeffs = cs
        self.prec = prec
        self.weight = weight
        self.base = base

    @classmethod
    def _raw(cls, val, coeffs, prec, weight, base) -> "LaurentJet":
        """Build from already normalised data (no leading/trailing zeros)."""
        out = object.__new__(cls)
        out.val = val
        out.coeffs = coeffs
        out.prec = prec
        out.weight = weight
        out.base = base
        return out

    # constructors ------------------------------------------------------
    @classmethod
    def monomial(cls, e: int, c=ONE, prec=INF, weight=FUNCTION, base=(ZERO, "z")):
        return cls(e, [c], prec, weight, base)

    @classmethod
    def constant(cls, c, prec=INF, weight=FUNCTION, base=(ZERO, "z")):
        return cls(0, [c], prec, weight, base)

    @classmethod
    def zero(cls, prec=INF, weight=FUNCTION, base=(ZERO, "z")):
        return cls(0, [], prec, weight, base)

    @classmethod
    def from_dict(cls, terms: Dict[int, object], prec=INF, weight=FUNCTION, base=(ZERO, "z")):
        if not terms:
            return cls.zero(prec, weight, base)
        lo, hi = min(terms), max(terms)
        return cls(lo, [terms.get(e, ZERO) for e in range(lo, hi + 1)], prec, weight, base)

    # inspection ------------------------------------------------------
    @property
    def kind(self) -> str:
        return kind_name(self.weight)

    def is_zero(self) -> bool:
        return not self.coeffs

    def __bool__(self):
        return bool(self.coeffs)

    @property
    def top(self) -> int:
        """One past the highest stored exponent."""
        return self.val + len(self.coeffs)

    def coefficient(self, e: int):
        if e >= self.prec:
            raise TruncationInsufficient(f"coefficient of order {e} beyond precision {self.prec}")
        i = e - self.val
        if 0 <= i < len(self.coeffs):
            return self.coeffs[i]
        return ZERO

    def terms(self) -> Dict[int, object]:
        return {self.val + i: c for i, c in enumerate(self.coeffs) if c}

    def leading(self):
        if not self.coeffs:
            raise DivisionByZeroJet("jet is zero to the known precision")
        return self.coeffs[0]

    def with_weight(self, weight) -> "LaurentJet":
        if isinstance(weight, str):
            weight = _KIND_CODES[weight]
        return LaurentJet._raw(self.val, self.coeffs, self.prec, weight, self.base)

    def truncate(self, prec) -> "LaurentJet":
        if prec >= self.prec:
            return self
        return LaurentJet(self.val, self.coeffs, prec, self.weight, self.base)

    def __repr__(self):
        if not self.coeffs:
            body = "0"
        else:
            body = " + ".join(f"({c})*z^{e}" for e, c in sorted(self.terms().items()))
        tail = "" if self.prec == INF else f" + O(z^{self.prec})"
        return f"<{self.kind} {body}{tail}>"

    def __eq__(self, other):
        if not isinstance(other, LaurentJet):
            return NotImplemented
        return (self.coeffs == other.coeffs and (self.val == other.val or not self.coeffs)
                and self.prec == other.prec and self.weight == other.weight)

    def __hash__(self):
        return hash((self.val, tuple(self.coeffs), self.prec, self.weight))

    def agrees_with(self, other: "LaurentJet") -> bool:
        """Equality up to the smaller of the two precisions."""
        p = min(self.prec, other.prec)
        diff = self.truncate(p) - other.truncate(p)
        return diff.is_zero()

    # arithmetic ------------------------------------------------------
    def _check(self, other: "LaurentJet"):
        if self.base is not other.base and self.base != other.base:
            raise BasepointMismatch(f"jets at {self.base} and {other.base}")

    def __add__(self, other):
        if not isinstance(other, LaurentJet):
            if not other:
                return self
            other = LaurentJet.constant(other, weight=self.weight, base=self.base)
        self._check(other)
        if self.weight != other.weight:
            raise KindMismatch(f"cannot add {self.kind} and {other.kind}")
        if not other.coeffs:
            return self.truncate(other.prec) if other.prec < self.prec else self
        if not self.coeffs:
            return other.truncate(self.prec) if self.prec < other.prec else other
        prec = self.prec if self.prec < other.prec else other.prec
        va, vb = self.val, other.val
        v = va if va < vb else vb
        hi = max(va + len(self.coeffs), vb + len(other.coeffs))
        if prec != INF and hi > prec:
            hi = prec
        n = hi - v
        if n <= 0:
            return LaurentJet(0, [], prec, self.weight, self.base)
        out = [ZERO] * n
        off = va - v
        for i, c in enumerate(self.coeffs):
            j = i + off
            if j >= n:
                break
            out[j] = c
        off = vb - v
        for i, c in enumerate(other.coeffs):
            j = i + off
            if j >= n:
                break
            out[j] = out[j] + c
        return LaurentJet(v, out, prec, self.weight, self.base)

    __radd__ = __add__

    def __neg__(self):
        return LaurentJet._raw(self.val, [-c for c in self.coeffs], self.prec, self.weight, self.base)

    def __sub__(self, other):
        if not isinstance(other, LaurentJet):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, k) -> "LaurentJet":
        if not k:
            return LaurentJet(0, [], self.prec, self.weight, self.base)
        return LaurentJet(self.val, [c * k for c in self.coeffs], self.prec, self.weight, self.base)

    def shift(self, k: int) -> "LaurentJet":
        """Multiply by zeta**k."""
        prec = self.prec + k if self.prec != INF else INF
        return LaurentJet._raw(self.val + k, self.coeffs, prec, self.weight, self.base)

    def __mul__(self, other):
        if not isinstance(other, LaurentJet):
            return self.scale(other)
        self._check(other)
        w = self.weight + other.weight
        a, b = self.coeffs, other.coeffs
        va, vb = self.val, other.val
        pa, pb = self.prec, other.prec
        prec = min(pa + vb, pb + va)
        if not a or not b:
            return LaurentJet(0, [], prec, w, self.base)
        v = va + vb
        la, lb = len(a), len(b)
        n = la + lb - 1
        if prec != INF and prec - v < n:
            n = prec - v
            if n <= 0:
                return LaurentJet(0, [], prec, w, self.base)
        out = _mul_lists(a, b, n)
        return LaurentJet(v, out, prec, w, self.base)

    def __rmul__(self, other):
        return self.scale(other)

    def inverse(self, prec=None) -> "LaurentJet":
        return LaurentJet.constant(ONE, base=self.base).divide(self, prec)

    def divide(self, other: "LaurentJet", prec=None) -> "LaurentJet":
        """Quotient; ``prec`` caps the absolute precision (mandatory if both are exact
        and the quotient does not terminate)."""
        if not isinstance(other, LaurentJet):
            return self.scale(_inverse(other))
        self._check(other)
        if not other.coeffs:
            raise DivisionByZeroJet("division by a jet that vanishes to known precision")
        b0 = other.coeffs[0]
        try:
            inv0 = _inverse(b0)
        except ZeroDivisionError as exc:
            raise DivisionByZeroJet("leading coefficient is not invertible") from exc
        w = self.weight - other.weight
        va, vb = self.val, other.val
        pa, pb = self.prec, other.prec
        v = va - vb
        p_res = min(pa - vb, pb + va - 2 * vb)
        if prec is not None and prec < p_res:
            p_res = prec
        if not self.coeffs:
            return LaurentJet(0, [], p_res, w, self.base)
        a, b = self.coeffs, other.coeffs
        if p_res == INF:
            # exact quotient only if it terminates: try polynomial division
            q = _exact_poly_div(a, b)
            if q is None:
                raise TruncationInsufficient("non-terminating quotient of exact jets needs a precision cap")
            return LaurentJet(v, q, INF, w, self.base)
        n = p_res - v
        if n <= 0:
            return LaurentJet(0, [], p_res, w, self.base)
        lb = len(b)
        q: List = []
        la = len(a)
        for i in range(n):
            s = a[i] if i < la else ZERO
            lo = i - lb + 1
            if lo < 0:
                lo = 0
            for j in range(lo, i):
                s = s - b[i - j] * q[j]
            q.append(s * inv0)
        return LaurentJet(v, q, p_res, w, self.base)

    def __truediv__(self, other):
        return self.divide(other)

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("use inverse() with an explicit precision for negative powers")
        result = LaurentJet.constant(ONE, base=self.base)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def derivative(self) -> "LaurentJet":
        """d/dzeta; a function jet becomes a one-form jet."""
        out = []
        for i, c in enumerate(self.coeffs):
            e = self.val + i
            out.append(c * e if e else ZERO)
        prec = self.prec - 1 if self.prec != INF else INF
        w = ONE_FORM if self.weight == FUNCTION else self.weight
        return LaurentJet(self.val - 1, out, prec, w, self.base)

    def principal_part(self) -> Dict[int, object]:
        """Coefficients of negative powers, as {order k: coefficient of zeta^-k}."""
        if self.prec < 0:
            raise TruncationInsufficient("principal part needs precision at least 0")
        return {-e: c for e, c in self.terms().items() if e < 0}

    def map_coeffs(self, f) -> "LaurentJet":
        return LaurentJet(self.val, [f(c) for c in self.coeffs], self.prec, self.weight, self.base)


def _mul_lists(a, b, n):
    la, lb = len(a), len(b)
    out = []
    for i in range(n):
        lo = i - lb + 1
        if lo < 0:
            lo = 0
        hi = i if i < la - 1 else la - 1
        s = a[lo] * b[i - lo]
        for j in range(lo + 1, hi + 1):
            s += a[j] * b[i - j]
        out.append(s)
    return out


def _exact_poly_div(a, b):
    """Polynomial quotient a/b if exact, else None (both lists lowest-first, b[0] != 0)."""
    if len(b) == 1:
        inv = _inverse(b[0])
        return [c * inv for c in a]
    n = len(a) - len(b) + 1
    if n <= 0:
        return None
    inv0 = _inverse(b[0])
    rem = list(a)
    q = []
    for i in range(n):
        c = rem[i] * inv0
        q.append(c)
        if c:
            for j in range(1, len(b)):
                rem[i + j] = rem[i + j] - c * b[j]
    if any(rem[n:]):
        return None
    return q


# ----------------------------------------------------------------------
# spec-level operations

def jet_arithmetic(a: LaurentJet, b: LaurentJet, op: str, prec=None) -> LaurentJet:
    """Add, multiply or divide two jets at the same basepoint.

    Parameters
    ----------
    a, b : LaurentJet
        Operands; they must share basepoint and coordinate.
    op : {"add", "mul", "div"}
        The operation.
    prec : int, optional
        Precision cap for a quotient of exact jets that does not terminate.

    Returns
    -------
    LaurentJet
        Result truncated at the best attainable order.  Kind tags combine
        additively in half-form weight (form * function = form, form / form =
        function).
    """
    if op == "add":
        out = a + b
    elif op == "mul":
        out = a * b
    elif op == "div":
        out = a.divide(b, prec)
    else:
        raise ValueError(f"unknown jet operation {op!r}")
    if op != "add" and a.coeffs and b.coeffs:
        expected = a.val + b.val if op == "mul" else a.val - b.val
        if out.prec <= expected:
            raise TruncationInsufficient("result has no representable terms")
    return out


def residue(j: LaurentJet):
    """Coefficient of ``zeta^-1 d zeta``."""
    if j.weight != ONE_FORM:
        raise KindMismatch(f"residue needs a one-form, got {j.kind}")
    return j.coefficient(-1)


def primitive(j: LaurentJet, anchored: bool = True) -> LaurentJet:
    """Primitive of a one-form jet.

    ``anchored=True`` returns the primitive vanishing at the basepoint, which
    requires the form to be holomorphic there; ``anchored=False`` returns the
    primitive with zero constant term (poles allowed).
    """
    if j.weight != ONE_FORM:
        raise KindMismatch(f"primitive needs a one-form, got {j.kind}")
    if j.prec <= -1 and j.val < 0:
        raise TruncationInsufficient("residue of the form is beyond the known precision")
    out = {}
    for e, c in j.terms().items():
        if e == -1:
            raise NonzeroResidue("form has a nonzero residue; use a difference of primitives")
        out[e + 1] = c * to_q(1) / (e + 1) if not hasattr(c, "ring") else c.scale(to_q(1) / (e + 1))
    if anchored and any(e < 0 for e in out):
        raise NonzeroAnchor("anchor point is a pole of the primitive")
    prec = j.prec + 1 if j.prec != INF else INF
    return LaurentJet.from_dict(out, prec, FUNCTION, j.base)


def d_by_dx(f: LaurentJet, xprime: LaurentJet, prec=None) -> LaurentJet:
    """The vector field dual to dx: ``(df/dzeta) / x'(zeta)`` as a function jet."""
    df = f.derivative().with_weight(FUNCTION)
    return df.divide(xprime.with_weight(FUNCTION), prec)


def flow_substitute(f: LaurentJet, x: LaurentJet, order: int, prec=None) -> Dict[int, LaurentJet]:
    """Phase flow ``e^{t d/dx} f`` as a map from the power of ``t`` to its jet.

    Parameters
    ----------
    f : LaurentJet
        Function jet to transport.
    x : LaurentJet
        Function jet of ``x``; ``dx`` must not vanish identically.
    order : int
        Highest power of ``t`` kept.
    prec : int, optional
        Precision cap for the quotients by ``x'``.

    Returns
    -------
    dict
        ``{k: d_x^k f / k!}`` for ``0 <= k <= order``.  Each application of
        ``d/dx`` at a zero of ``dx`` of order ``r - 1`` lowers the valuation
        by ``r``; if the requested order is no longer representable the
        call raises :class:`TruncationInsufficient`.
    """
    xp = x.derivative().with_weight(FUNCTION)
    if xp.is_zero():
        raise TruncationInsufficient("dx vanishes to the known precision")
    out = {0: f}
    cur = f
    fact = ONE
    for k in range(1, order + 1):
        cur = d_by_dx(cur, xp, prec)
        if cur.prec != INF and cur.prec <= cur.val and not cur.is_zero():
            raise TruncationInsufficient("flow lost all precision")
        fact = fact * k
        out[k] = cur.scale(ONE / fact)
    return out


def eval_t_series(series: Dict[int, LaurentJet], t) -> LaurentJet:
    """Substitute a scalar for ``t`` in a polynomial-in-``t`` jet series."""
    acc = None
    for k in sorted(series):
        term = series[k].scale(t ** k if k else ONE)
        acc = term if acc is None else acc + term
    return acc


__all__ = [
    "INF", "FUNCTION", "HALF_FORM", "ONE_FORM", "LaurentJet", "jet_arithmetic",
    "residue", "primitive", "flow_substitute", "d_by_dx", "kind_name",
]
