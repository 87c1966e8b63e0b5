"""Sparse truncated multivariate series with exact coefficients.

A :class:`Ring` fixes the ordered variable names and the truncation rule
(per-variable caps and an optional weighted total-degree cap).  A
:class:`Series` is a map from exponent tuples to coefficients in that ring.
Negative exponents are allowed, so Laurent polynomials in a variable are
representable; the caps only bound exponents from above.  A variable with
cap 1 behaves as a dual number (``eps**2 = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

from .rational import ONE, ZERO, to_q

Exps = Tuple[int, ...]


@dataclass(frozen=True)
class Ring:
    variables: Tuple[str, ...]
    caps: Tuple[Optional[int], ...] = ()
    weights: Tuple[int, ...] = ()
    weight_cap: Optional[int] = None

    def __post_init__(self):
        n = len(self.variables)
        if len(set(self.variables)) != n:
            raise ValueError("duplicate variable names")
        if not self.caps:
            object.__setattr__(self, "caps", (None,) * n)
        if not self.weights:
            object.__setattr__(self, "weights", (1,) * n)
        if len(self.caps) != n or len(self.weights) != n:
            raise ValueError("caps/weights must match the variables")

    @classmethod
    def make(cls, variables: Sequence[str], caps: Optional[Mapping[str, int]] = None,
             weights: Optional[Mapping[str, int]] = None,
             weight_cap: Optional[int] = None) -> "Ring":
        caps = caps or {}
        weights = weights or {}
        return cls(tuple(variables), tuple(caps.get(v) for v in variables),
                   tuple(weights.get(v, 0 if weight_cap is not None else 1) for v in variables)
                   if weights else (),
                   weight_cap)

    def index(self, name: str) -> int:
        return self.variables.index(name)

    def admits(self, exps: Exps) -> bool:
        for e, c in zip(exps, self.caps):
            if c is not None and e > c:
                return False
        if self.weight_cap is not None:
            if sum(w * e for w, e in zip(self.weights, exps)) > self.weight_cap:
                return False
        return True

    @property
    def zero_exps(self) -> Exps:
        return (0,) * len(self.variables)


class Series:
    """Truncated multivariate series; immutable by convention."""

    __slots__ = ("ring", "terms")

    def __init__(self, ring: Ring, terms: Optional[Mapping[Exps, object]] = None):
        self.ring = ring
        clean: Dict[Exps, object] = {}
        if terms:
            for e, c in terms.items():
                if c and ring.admits(e):
                    clean[tuple(e)] = c
        self.terms = clean

    # construction -----------------------------------------------------
    @classmethod
    def const(cls, ring: Ring, value) -> "Series":
        value = to_q(value) if isinstance(value, (int, str)) else value
        return cls(ring, {ring.zero_exps: value})

    @classmethod
    def var(cls, ring: Ring, name: str, power: int = 1, coeff=ONE) -> "Series":
        e = [0] * len(ring.variables)
        e[ring.index(name)] = power
        return cls(ring, {tuple(e): coeff})

    @classmethod
    def monomial(cls, ring: Ring, exps: Mapping[str, int], coeff=ONE) -> "Series":
        e = [0] * len(ring.variables)
        for k, v in exps.items():
            e[ring.index(k)] = v
        return cls(ring, {tuple(e): coeff})

    def _new(self, terms) -> "Series":
        out = Series.__new__(Series)
        out.ring = self.ring
        out.terms = terms
        return out

    # inspection ------------------------------------------------------
    def __bool__(self):
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, exps) -> object:
        if isinstance(exps, Mapping):
            e = [0] * len(self.ring.variables)
            for k, v in exps.items():
                e[self.ring.index(k)] = v
            exps = tuple(e)
        return self.terms.get(tuple(exps), ZERO)

    def constant(self):
        return self.terms.get(self.ring.zero_exps, ZERO)

    def items(self):
        return sorted(self.terms.items())

    def __eq__(self, other):
        if isinstance(other, Series):
            return self.ring.variables == other.ring.variables and self.terms == other.terms
        if not self.terms:
            return other == 0
        return self.terms == {self.ring.zero_exps: other}

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for e, c in self.items():
            mono = "*".join(
                (v if p == 1 else f"{v}^{p}") for v, p in zip(self.ring.variables, e) if p
            )
            parts.append(f"({c})" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)

    # arithmetic ------------------------------------------------------
    def _coerce(self, other) -> "Series":
        if isinstance(other, Series):
            if other.ring.variables != self.ring.variables:
                raise ValueError("series live in different rings")
            return other
        return Series.const(self.ring, other)

    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            v = terms.get(e, ZERO) + c
            if v:
                terms[e] = v
            else:
                terms.pop(e, None)
        return self._new(terms)

    __radd__ = __add__

    def __neg__(self):
        return self._new({e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def scale(self, k) -> "Series":
        if not k:
            return self._new({})
        return self._new({e: c * k for e, c in self.terms.items()})

    def __mul__(self, other):
        if not isinstance(other, Series):
            return self.scale(other)
        other = self._coerce(other)
        ring = self.ring
        out: Dict[Exps, object] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                if not ring.admits(e):
                    continue
                v = out.get(e, ZERO) + c1 * c2
                if v:
                    out[e] = v
                else:
                    out.pop(e, None)
        return self._new(out)

    def __rmul__(self, other):
        return self.scale(other)

    def __pow__(self, k: int):
        if k < 0:
            return self.inverse() ** (-k)
        result = Series.const(self.ring, ONE)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def _nilpotent_powers(self, max_terms: int = 10_000):
        """Yield x, x**2, ... until truncation kills the power."""
        power = self
        count = 0
        while power.terms:
            yield power
            power = power * self
            count += 1
            if count > max_terms:
                raise ArithmeticError("series is not topologically nilpotent in this ring")

    def inverse(self) -> "Series":
        c0 = self.constant()
        if not c0:
            raise ZeroDivisionError("series with zero constant term is not invertible")
        inv0 = 1 / c0
        x = self.scale(inv0) - ONE  # nilpotent part
        acc = Series.const(self.ring, ONE)
        sign = -1
        for p in x._nilpotent_powers():
            acc = acc + p.scale(sign)
            sign = -sign
        return acc.scale(inv0)

    def __truediv__(self, other):
        if isinstance(other, Series):
            return self * other.inverse()
        return self.scale(1 / to_q(other) if isinstance(other, int) else 1 / other)

    def exp(self) -> "Series":
        if self.constant():
            raise ValueError("exp needs a series without constant term")
        acc = Series.const(self.ring, ONE)
        fact = ONE
        for k, p in enumerate(self._nilpotent_powers(), start=1):
            fact = fact * k
            acc = acc + p.scale(1 / fact)
        return acc

    def log(self) -> "Series":
        if self.constant() != 1:
            raise ValueError("log needs constant term 1")
        x = self - ONE
        acc = Series(self.ring)
        for k, p in enumerate(x._nilpotent_powers(), start=1):
            acc = acc + p.scale(to_q(1) / k if k % 2 else -to_q(1) / k)
        return acc

    def map_coeffs(self, f) -> "Series":
        return Series(self.ring, {e: f(c) for e, c in self.terms.items()})

    def derivative(self, name: str) -> "Series":
        i = self.ring.index(name)
        out = {}
        for e, c in self.terms.items():
            if e[i]:
                ne = list(e)
                ne[i] -= 1
                out[tuple(ne)] = c * e[i]
        return Series(self.ring, out)

    def restrict(self, predicate) -> "Series":
        return self._new({e: c for e, c in self.terms.items() if predicate(e)})

    def with_ring(self, ring: Ring) -> "Series":
        """Re-embed into a ring whose variables extend (or reorder) ours."""
        pos = [ring.index(v) for v in self.ring.variables]
        out = {}
        for e, c in self.terms.items():
            ne = [0] * len(ring.variables)
            for p, x in zip(pos, e):
                ne[p] = x
            out[tuple(ne)] = c
        return Series(ring, out)

    def first_difference(self, other: "Series"):
        """Smallest exponent where the two series differ, or None."""
        other = self._coerce(other)
        keys = sorted(set(self.terms) | set(other.terms))
        for e in keys:
            a, b = self.terms.get(e, ZERO), other.terms.get(e, ZERO)
            if a != b:
                return e, a, b
        return None


def sum_series(ring: Ring, items: Iterable[Series]) -> Series:
    terms: Dict[Exps, object] = {}
    for s in items:
        for e, c in s.terms.items():
            v = terms.get(e, ZERO) + c
            if v:
                terms[e] = v
            else:
                terms.pop(e, None)
    return Series(ring, terms)


__all__ = ["Ring", "Series", "sum_series"]
