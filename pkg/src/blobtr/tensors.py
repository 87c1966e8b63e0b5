"""Basis labels, symmetric sparse tensors and systems of differentials.

Labels name one-forms on the z-line:

* ``('h', l)`` is ``z**(l-1) dz`` (holomorphic away from infinity);
* ``('p', q, k)`` is ``dz / (z - q)**k``.

A :class:`Tensor` stores a symmetric n-differential as a map from sorted
label tuples to the coefficient of *each* ordered arrangement of that tuple,
so ``sum over ordered (e_1..e_n) of c(sorted e) e_1(p_1)...e_n(p_n)``.
A :class:`System` maps ``(hbar degree, arity)`` to tensors.
"""

from __future__ import annotations

import math
from collections import Counter
from itertools import product
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional, Tuple

from .jets import INF, ONE_FORM, LaurentJet
from .rational import ONE, ZERO, q_str, to_q

Label = tuple
Key = Tuple[Label, ...]


def hol(l: int) -> Label:
    return ("h", l)


def pole(q, k: int) -> Label:
    return ("p", to_q(q), k)


def is_pole(label: Label) -> bool:
    return label[0] == "p"


def label_str(label: Label) -> str:
    if label[0] == "h":
        return f"eta{label[1]}"
    if label[0] == "p":
        return f"xi[{q_str(label[1])},{label[2]}]"
    return repr(label)


def key_weight(key: Key) -> int:
    return sum(e[2] for e in key if e[0] == "p")


def orderings(key: Key) -> int:
    """Number of distinct orderings of a multiset."""
    out = math.factorial(len(key))
    for m in Counter(key).values():
        out //= math.factorial(m)
    return out


def multiset_factorials(key: Key) -> int:
    out = 1
    for m in Counter(key).values():
        out *= math.factorial(m)
    return out


def label_jet(label: Label, at, prec) -> LaurentJet:
    """One-form jet of a basis label in ``zeta = z - at``, absolute precision ``prec``."""
    at = to_q(at)
    base = (at, "z")
    if label[0] == "h":
        l = label[1]
        coeffs = [to_q(math.comb(l - 1, m)) * at ** (l - 1 - m) for m in range(l)]
        return LaurentJet(0, coeffs, INF, ONE_FORM, base).truncate(prec)
    if label[0] == "p":
        q, k = label[1], label[2]
        if q == at:
            return LaurentJet(-k, [ONE], INF, ONE_FORM, base).truncate(prec)
        c = at - q
        n = int(prec) if prec != INF else None
        if n is None:
            raise ValueError("pole label away from its pole needs a finite precision")
        inv = 1 / c
        coeffs = []
        lead = inv ** k
        ratio = -inv
        for m in range(max(n, 0)):
            coeffs.append(to_q(math.comb(k + m - 1, m)) * lead * ratio ** m)
        return LaurentJet(0, coeffs, prec, ONE_FORM, base)
    raise ValueError(f"unknown label {label!r}")


class Tensor:
    """Symmetric sparse n-differential; immutable by convention."""

    __slots__ = ("n", "data", "diag")

    def __init__(self, n: int, data: Optional[Mapping[Key, object]] = None, diag: bool = False):
        self.n = n
        self.diag = diag
        clean = {}
        if data:
            for k, v in data.items():
                k = tuple(sorted(k))
                if len(k) != n:
                    raise ValueError(f"key {k} does not have arity {n}")
                if v:
                    clean[k] = v
        self.data = clean

    @classmethod
    def _wrap(cls, n, data, diag=False) -> "Tensor":
        out = object.__new__(cls)
        out.n, out.data, out.diag = n, data, diag
        return out

    def __bool__(self):
        return bool(self.data) or self.diag

    def is_zero(self) -> bool:
        return not self.data and not self.diag

    def __getitem__(self, key) -> object:
        return self.data.get(tuple(sorted(key)), ZERO)

    def items(self):
        return sorted(self.data.items())

    def keys(self):
        return self.data.keys()

    def labels(self) -> set:
        return {e for k in self.data for e in k}

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.n == other.n and self.diag == other.diag and self.data == other.data

    def __hash__(self):
        return hash((self.n, self.diag, frozenset(self.data.items())))

    def __repr__(self):
        body = ", ".join(f"{tuple(label_str(e) for e in k)}: {v}" for k, v in self.items())
        flag = " + B" if self.diag else ""
        return f"Tensor[{self.n}]({{{body}}}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        if other.n != self.n:
            raise ValueError("arity mismatch")
        if self.diag and other.diag:
            raise ValueError("adding two copies of the diagonal kernel")
        data = dict(self.data)
        for k, v in other.data.items():
            s = data.get(k, ZERO) + v
            if s:
                data[k] = s
            else:
                data.pop(k, None)
        return Tensor._wrap(self.n, data, self.diag or other.diag)

    def __neg__(self):
        if self.diag:
            raise ValueError("cannot negate the diagonal kernel")
        return Tensor._wrap(self.n, {k: -v for k, v in self.data.items()})

    def __sub__(self, other: "Tensor") -> "Tensor":
        diag = self.diag
        if other.diag:
            if not self.diag:
                raise ValueError("subtracting a diagonal kernel that is not present")
            diag = False
        o = Tensor._wrap(other.n, other.data)
        s = Tensor._wrap(self.n, self.data)
        out = s + (-o)
        out.diag = diag
        return out

    def scale(self, c) -> "Tensor":
        if not c:
            return Tensor(self.n)
        return Tensor._wrap(self.n, {k: v * c for k, v in self.data.items()}, self.diag)

    def without_diag(self) -> "Tensor":
        return Tensor._wrap(self.n, self.data, False)

    def with_diag(self) -> "Tensor":
        return Tensor._wrap(self.n, self.data, True)

    def filter(self, pred: Callable[[Key], bool]) -> "Tensor":
        return Tensor._wrap(self.n, {k: v for k, v in self.data.items() if pred(k)}, self.diag)

    def map_coeffs(self, f) -> "Tensor":
        return Tensor(self.n, {k: f(v) for k, v in self.data.items()}, self.diag)

    def substitute(self, mapping: Callable[[Label], Mapping[Label, object]]) -> "Tensor":
        """Apply a linear change of basis slotwise.

        ``mapping(label)`` returns the expansion ``{new label: coefficient}``.
        """
        if not self.data:
            return Tensor(self.n, diag=self.diag)
        cache: Dict[Label, list] = {}

        def expand(e):
            if e not in cache:
                cache[e] = sorted(mapping(e).items())
            return cache[e]

        acc: Dict[Key, object] = {}
        for key, c in self.data.items():
            nk = orderings(key)
            factors = [expand(e) for e in key]
            for combo in product(*factors):
                coef = c * nk
                for _, m in combo:
                    coef = coef * m
                new = tuple(sorted(lab for lab, _ in combo))
                acc[new] = acc.get(new, ZERO) + coef
        out = {}
        for k, v in acc.items():
            if v:
                v = v * (ONE / orderings(k))
                if v:
                    out[k] = v
        return Tensor._wrap(self.n, out, self.diag)

    def contract_slot(self, label: Label) -> Dict[Key, object]:
        """Coefficients of ``label(p_1) * rest`` as a map on sorted remaining keys."""
        out = {}
        for k, v in self.data.items():
            if label in k:
                rest = list(k)
                rest.remove(label)
                out[tuple(rest)] = v
        return out


class System:
    """Map ``(d, n) -> Tensor`` with ``d`` the hbar degree.

    The ``(0, 2)`` entry, when the system carries a Bergman kernel, has its
    ``diag`` flag set and stores only the part regular on the diagonal.
    """

    __slots__ = ("entries", "meta")

    def __init__(self, entries: Optional[Mapping[Tuple[int, int], Tensor]] = None, **meta):
        self.entries: Dict[Tuple[int, int], Tensor] = {}
        if entries:
            for dn, t in entries.items():
                self[dn] = t
        self.meta = dict(meta)

    def __setitem__(self, dn, t: Tensor):
        d, n = dn
        if t.n != n:
            raise ValueError(f"tensor arity {t.n} does not match slot {dn}")
        if t.is_zero():
            self.entries.pop((d, n), None)
        else:
            self.entries[(d, n)] = t

    def __getitem__(self, dn) -> Tensor:
        t = self.entries.get(tuple(dn))
        return t if t is not None else Tensor(dn[1])

    def __contains__(self, dn):
        return tuple(dn) in self.entries

    def get(self, d: int, n: int) -> Tensor:
        return self[(d, n)]

    def items(self):
        return sorted(self.entries.items())

    def keys(self):
        return sorted(self.entries)

    def copy(self) -> "System":
        return System(dict(self.entries), **self.meta)

    def max_degree(self) -> int:
        return max((d for d, _ in self.entries), default=-1)

    def restrict(self, max_d: Optional[int] = None, max_n: Optional[int] = None) -> "System":
        out = {}
        for (d, n), t in self.entries.items():
            if (max_d is None or d <= max_d) and (max_n is None or n <= max_n):
                out[(d, n)] = t
        meta = dict(self.meta)
        if max_n is not None:
            cap = meta.get("max_n")
            meta["max_n"] = max_n if cap is None else min(cap, max_n)
        return System(out, **meta)

    def __eq__(self, other):
        if not isinstance(other, System):
            return NotImplemented
        return self.entries == other.entries

    def __add__(self, other: "System") -> "System":
        out = dict(self.entries)
        for dn, t in other.entries.items():
            out[dn] = out[dn] + t if dn in out else t
        return System(out, **self.meta)

    def __sub__(self, other: "System") -> "System":
        out = dict(self.entries)
        for dn, t in other.entries.items():
            out[dn] = out[dn] - t if dn in out else -t
        return System(out, **self.meta)

    def map_tensors(self, f) -> "System":
        return System({dn: f(t) for dn, t in self.entries.items()}, **self.meta)

    def first_difference(self, other: "System"):
        """``None`` if equal, else ``((d, n), key, mine, theirs)`` at the smallest place."""
        for dn in sorted(set(self.entries) | set(other.entries)):
            a, b = self[dn], other[dn]
            if a.diag != b.diag:
                return dn, ("diag",), a.diag, b.diag
            for key in sorted(set(a.data) | set(b.data)):
                x, y = a.data.get(key, ZERO), b.data.get(key, ZERO)
                if x != y:
                    return dn, key, x, y
        return None

    def __repr__(self):
        return "System(" + ", ".join(f"{dn}: {t!r}" for dn, t in self.items()) + ")"


def topological_degree(g: int, n: int) -> int:
    return 2 * g - 2 + n


def genus_of(d: int, n: int) -> Optional[int]:
    twice = d + 2 - n
    if twice < 0 or twice % 2:
        return None
    return twice // 2


__all__ = [
    "Label", "Key", "hol", "pole", "is_pole", "label_str", "label_jet", "Tensor", "System",
    "orderings", "multiset_factorials", "key_weight", "topological_degree", "genus_of",
]
