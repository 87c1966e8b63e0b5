"""Convolution of two systems of differentials and blobbed topological recursion.

Three independent routes compute the convolution of a pole-side system
``psi~`` (poles at the key points) with a holomorphic-side system ``phi~``:

* :func:`convolve_graphs` sums weighted graphs built by :func:`enumerate_graphs`
  and contracts vertex tensors edge by edge;
* :func:`moyal_convolve` applies ``exp(sum b d_t d_s)`` to ``exp(F_psi) exp(F_phi)``
  on potentials and takes the logarithm;
* :func:`lmk_potentials` runs the recursion in the number of internal edges.

Potentials are sparse polynomials in side-tagged variables ``(side, label)``
with ``side`` 0 for the pole side and 1 for the holomorphic side.  A tensor
coefficient ``c`` (per ordered arrangement) of a sorted key becomes the
monomial coefficient ``c / prod(multiplicity!)``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from itertools import permutations, product
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

from .curve import BergmanKernel, SpectralCurveSpec, ordered, pairing, star_pairing
from .errors import BasisMismatch, OverlappingPoleSets, UngradedInput
from .gentr import gentr_system
from .rational import ONE, ZERO, to_q
from .tensors import Key, Label, System, Tensor, hol, is_pole, multiset_factorials

log = logging.getLogger(__name__)

PSI, PHI = 0, 1
Var = Tuple[int, Label]
Mono = Tuple[Var, ...]
Keep = Callable[[int, Mono], bool]


def _merge(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    return tuple(sorted(a + b))


def _remove(mono: Mono, var: Var) -> Mono:
    i = mono.index(var)
    return mono[:i] + mono[i + 1:]


def _keep_all(d: int, mono: Mono) -> bool:
    return True


class Potential:
    """Sparse polynomial ``sum hbar**d * coeff * prod vars``; immutable by convention."""

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Mapping[Tuple[int, Mono], object]] = None):
        clean = {}
        if terms:
            for k, v in terms.items():
                if v:
                    clean[k] = v
        self.terms: Dict[Tuple[int, Mono], object] = clean

    @classmethod
    def _wrap(cls, terms) -> "Potential":
        out = object.__new__(cls)
        out.terms = terms
        return out

    @classmethod
    def one(cls) -> "Potential":
        return cls._wrap({(0, ()): ONE})

    @classmethod
    def from_system(cls, system: System, side: int = PSI) -> "Potential":
        """Potential of a tilde-form system (no diagonal kernels allowed)."""
        terms: Dict[Tuple[int, Mono], object] = {}
        for (d, n), t in system.items():
            if t.diag:
                raise ValueError(f"entry {(d, n)} still carries the diagonal kernel; pass the tilde form")
            for key, c in t.data.items():
                mono = tuple((side, e) for e in key)
                terms[(d, mono)] = c / multiset_factorials(key)
        return cls._wrap(terms)

    def to_system(self, max_n: Optional[int] = None) -> System:
        """Forget the side tags and read off the tensors (constant terms dropped)."""
        acc: Dict[Tuple[int, int], Dict[Key, object]] = {}
        for (d, mono), f in self.terms.items():
            n = len(mono)
            if n == 0 or (max_n is not None and n > max_n):
                continue
            key = tuple(sorted(e for _, e in mono))
            slot = acc.setdefault((d, n), {})
            slot[key] = slot.get(key, ZERO) + f * multiset_factorials(key)
        return System({dn: Tensor(dn[1], data) for dn, data in acc.items()})

    def to_tagged(self, d: int, n_psi: int, n_phi: int) -> Tensor:
        """Tensor over tagged labels with the given side counts at hbar degree ``d``."""
        data = {}
        for (dd, mono), f in self.terms.items():
            if dd != d:
                continue
            a = sum(1 for s, _ in mono if s == PSI)
            if a == n_psi and len(mono) - a == n_phi:
                data[mono] = f * multiset_factorials(mono)
        return Tensor(n_psi + n_phi, data)

    # arithmetic --------------------------------------------------------
    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        return isinstance(other, Potential) and self.terms == other.terms

    def __repr__(self):
        return f"Potential({len(self.terms)} terms)"

    def constant(self, d: int = 0):
        return self.terms.get((d, ()), ZERO)

    def degree_range(self) -> Tuple[int, int]:
        degs = [len(m) for _, m in self.terms]
        return (min(degs), max(degs)) if degs else (0, 0)

    def filter(self, keep: Keep) -> "Potential":
        return Potential._wrap({k: v for k, v in self.terms.items() if keep(*k)})

    def __add__(self, other: "Potential") -> "Potential":
        out = dict(self.terms)
        for k, v in other.terms.items():
            s = out.get(k, ZERO) + v
            if s:
                out[k] = s
            else:
                out.pop(k, None)
        return Potential._wrap(out)

    def __sub__(self, other: "Potential") -> "Potential":
        return self + other.scale(-ONE)

    def scale(self, c) -> "Potential":
        if not c:
            return Potential()
        return Potential._wrap({k: v * c for k, v in self.terms.items()})

    def mul(self, other: "Potential", keep: Keep = _keep_all) -> "Potential":
        out: Dict[Tuple[int, Mono], object] = {}
        for (d1, m1), c1 in self.terms.items():
            for (d2, m2), c2 in other.terms.items():
                d = d1 + d2
                m = _merge(m1, m2)
                if not keep(d, m):
                    continue
                v = out.get((d, m), ZERO) + c1 * c2
                if v:
                    out[(d, m)] = v
                else:
                    out.pop((d, m), None)
        return Potential._wrap(out)

    def exp(self, keep: Keep) -> "Potential":
        """``exp`` of a potential without constant term, truncated by ``keep``."""
        if self.constant():
            raise ValueError("exp needs a vanishing constant term")
        acc = Potential.one()
        power = Potential.one()
        k = 0
        while True:
            k += 1
            power = power.mul(self, keep).scale(ONE / k)
            if not power:
                return acc
            acc = acc + power

    def log(self, keep: Keep) -> "Potential":
        """``log`` of a potential with constant term 1, truncated by ``keep``."""
        if self.constant() != 1:
            raise ValueError("log needs constant term 1")
        x = Potential._wrap({k: v for k, v in self.terms.items() if k != (0, ())})
        acc = Potential()
        power = Potential.one()
        k = 0
        while True:
            k += 1
            power = power.mul(x, keep)
            if not power:
                return acc
            acc = acc + power.scale(to_q(1) / k if k % 2 else -to_q(1) / k)

    def derivative(self, var: Var) -> "Potential":
        out: Dict[Tuple[int, Mono], object] = {}
        for (d, m), c in self.terms.items():
            k = m.count(var)
            if k:
                nm = _remove(m, var)
                out[(d, nm)] = out.get((d, nm), ZERO) + c * k
        return Potential(out)

    def variables(self) -> set:
        return {v for _, m in self.terms for v in m}

    def contract(self, weights: Mapping[Var, object]) -> "Potential":
        """``sum_v weights[v] * d/dv`` applied to the potential."""
        out: Dict[Tuple[int, Mono], object] = {}
        for (d, m), c in self.terms.items():
            for v, k in Counter(m).items():
                w = weights.get(v)
                if not w:
                    continue
                nm = _remove(m, v)
                out[(d, nm)] = out.get((d, nm), ZERO) + c * k * w
        return Potential(out)

    def times_var(self, var: Var, c=ONE) -> "Potential":
        return Potential._wrap({(d, _merge(m, (var,))): v * c for (d, m), v in self.terms.items()})


# ----------------------------------------------------------------------
# pairing data and grading bounds

def pairing_matrix(psi_labels: Iterable[Label], phi_labels: Iterable[Label], points) -> Dict[Label, Dict[Label, object]]:
    """``b[e_psi][e_phi] = e_psi * e_phi`` (residues at ``points``), nonzero entries only."""
    pts = tuple(sorted(to_q(q) for q in points))
    out: Dict[Label, Dict[Label, object]] = {}
    phi_labels = sorted(set(phi_labels))
    for e0 in sorted(set(psi_labels)):
        row = {}
        for e1 in phi_labels:
            v = pairing(e0, e1, pts)
            if v:
                row[e1] = v
        if row:
            out[e0] = row
    return out


def availability(system: System) -> Dict[int, List[int]]:
    """Arity -> sorted hbar degrees with a nonzero entry."""
    out: Dict[int, List[int]] = {}
    for (d, n), t in system.items():
        if t.data:
            out.setdefault(n, []).append(d)
    return {n: sorted(ds) for n, ds in out.items()}


def _check_grading(psi: System, phi: System) -> None:
    if any(d <= 0 for (d, _), t in psi.items() if t.data):
        raise UngradedInput("the pole-side system has hbar^0 (or lower) terms")
    if any(d < 0 for (d, _), t in phi.items() if t.data):
        raise UngradedInput("the holomorphic-side system is not regular in hbar")


def max_internal_edges(psi: System, max_degree: int) -> int:
    """Largest total arity of pole-side vertices with hbar budget ``max_degree``."""
    best = [0] * (max_degree + 1)
    avail = availability(psi)
    for h in range(1, max_degree + 1):
        for n, ds in avail.items():
            d = ds[0]
            if d <= h:
                best[h] = max(best[h], best[h - d] + n)
    return best[max_degree]


def _check_points(system: System, points) -> None:
    pts = set(points)
    for (_, _), t in system.items():
        for e in t.labels():
            if is_pole(e) and e[1] in pts:
                raise BasisMismatch(f"holomorphic-side label {e!r} has a pole at a key point")


# ----------------------------------------------------------------------
# Moyal route

def moyal_convolve(F_psi: Potential, F_phi: Potential, b: Mapping[Label, Mapping[Label, object]],
                   max_degree: int, max_n: int) -> Potential:
    """``F_omega = log(exp(sum b d_t d_s) exp(F_psi) exp(F_phi))``, truncated.

    Parameters
    ----------
    F_psi, F_phi : Potential
        Pole-side potential (variables tagged 0, hbar degree >= 1) and
        holomorphic-side potential (variables tagged 1, hbar degree >= 0).
    b : mapping
        ``b[e_psi][e_phi]``, the star pairing of basis labels.
    max_degree : int
        hbar cap.
    max_n : int
        Total degree cap of the output.

    Returns
    -------
    Potential
        ``F_omega`` up to ``hbar**max_degree`` and degree ``max_n``, constant
        terms (vacuum graphs) included.

    Raises
    ------
    UngradedInput
        If ``F_psi`` has hbar^0 terms or ``F_phi`` negative powers.
    """
    if any(d <= 0 for d, _ in F_psi.terms):
        raise UngradedInput("pole-side potential has hbar^0 terms")
    if any(d < 0 for d, _ in F_phi.terms):
        raise UngradedInput("holomorphic-side potential is not regular in hbar")
    H = max_degree
    e_psi = F_psi.exp(lambda d, m: d <= H)
    a_max = e_psi.degree_range()[1]
    s_cap = max_n + a_max
    e_phi = F_phi.exp(lambda d, m: d <= H and len(m) <= s_cap)

    X: Dict[Tuple[int, Mono], object] = {}
    for (d1, m1), c1 in e_psi.terms.items():
        a = len(m1)
        for (d2, m2), c2 in e_phi.terms.items():
            if d1 + d2 > H:
                continue
            bdeg = len(m2)
            if a > max_n + bdeg or bdeg > max_n + a:
                continue
            key = (d1 + d2, _merge(m1, m2))
            v = X.get(key, ZERO) + c1 * c2
            if v:
                X[key] = v
            else:
                X.pop(key, None)

    total: Dict[Tuple[int, Mono], object] = {k: v for k, v in X.items() if len(k[1]) <= max_n}
    Y = X
    k = 0
    while Y:
        k += 1
        Y = _apply_pairing(Y, b, max_n, ONE / k)
        for key, v in Y.items():
            if len(key[1]) <= max_n:
                s = total.get(key, ZERO) + v
                if s:
                    total[key] = s
                else:
                    total.pop(key, None)
    expo = Potential._wrap(total)
    return expo.log(lambda d, m: d <= H and len(m) <= max_n)


def _apply_pairing(Y, b, max_n: int, factor) -> Dict[Tuple[int, Mono], object]:
    """One application of ``sum b d_t d_s`` (times ``factor``), dropping dead terms."""
    out: Dict[Tuple[int, Mono], object] = {}
    for (d, m), c in Y.items():
        counts = Counter(m)
        tv = [(v, k) for v, k in counts.items() if v[0] == PSI and v[1] in b]
        if not tv:
            continue
        sv = {v[1]: k for v, k in counts.items() if v[0] == PHI}
        if not sv:
            continue
        a = sum(k for v, k in counts.items() if v[0] == PSI) - 1
        bb = len(m) - a - 2
        if abs(a - bb) > max_n:
            continue
        for (t, kt) in tv:
            for e1, val in b[t[1]].items():
                ks = sv.get(e1)
                if not ks:
                    continue
                nm = _remove(_remove(m, t), (PHI, e1))
                key = (d, nm)
                v = out.get(key, ZERO) + c * kt * ks * val * factor
                if v:
                    out[key] = v
                else:
                    out.pop(key, None)
    return out


def convolve_moyal(psi: System, phi: System, points, max_degree: int, max_n: int) -> System:
    """Convolution via potentials; see :func:`moyal_convolve`."""
    _check_grading(psi, phi)
    pts = tuple(sorted(to_q(q) for q in points))
    _check_points(phi, pts)
    Fp = Potential.from_system(psi.restrict(max_degree), PSI)
    Ff = Potential.from_system(phi.restrict(max_degree), PHI)
    b = pairing_matrix({v[1] for v in Fp.variables()}, {v[1] for v in Ff.variables()}, pts)
    return moyal_convolve(Fp, Ff, b, max_degree, max_n).to_system(max_n)


# ----------------------------------------------------------------------
# recursion in the number of internal edges

def lmk_potentials(psi: System, phi: System, points, max_degree: int, max_n: int) -> List[Potential]:
    """Potentials ``G_k`` of the graphs with ``k`` internal edges.

    ``G_0 = F_psi + F_phi`` and
    ``k G_k = D G_{k-1} + sum_{k1+k2=k-1} sum b d_t G_{k1} d_s G_{k2}``, where
    ``D = sum b d_t d_s``.  The coefficient of a monomial with ``l`` pole-side
    and ``m`` holomorphic-side variables encodes the tensor ``omega_{l,m,k}``.
    """
    _check_grading(psi, phi)
    pts = tuple(sorted(to_q(q) for q in points))
    _check_points(phi, pts)
    H = max_degree
    kmax = max_internal_edges(psi, H)

    def keep_for(k):
        cap = max_n + 2 * (kmax - k)
        return lambda d, m: d <= H and len(m) <= cap

    Fp = Potential.from_system(psi.restrict(H), PSI)
    Ff = Potential.from_system(phi.restrict(H), PHI).filter(keep_for(0))
    b = pairing_matrix({v[1] for v in Fp.variables()}, {v[1] for v in Ff.variables()}, pts)
    G = [Fp + Ff]
    for k in range(1, kmax + 1):
        keep = keep_for(k)
        acc = Potential._wrap(_apply_pairing(G[k - 1].terms, b, 10 ** 9, ONE)).filter(keep)
        for k1 in range(k):
            k2 = k - 1 - k1
            left = _contract_psi(G[k1], b)
            for e1, part in left.items():
                right = G[k2].derivative((PHI, e1))
                if right:
                    acc = acc + part.mul(right, keep)
        G.append(acc.scale(ONE / k))
    return G


def _contract_psi(G: Potential, b) -> Dict[Label, Potential]:
    """``e_phi -> sum_{e_psi} b[e_psi][e_phi] d G / d t_{e_psi}``."""
    acc: Dict[Label, Dict[Tuple[int, Mono], object]] = {}
    for (d, m), c in G.terms.items():
        for v, k in Counter(m).items():
            if v[0] != PSI or v[1] not in b:
                continue
            nm = _remove(m, v)
            for e1, val in b[v[1]].items():
                slot = acc.setdefault(e1, {})
                slot[(d, nm)] = slot.get((d, nm), ZERO) + c * k * val
    return {e1: Potential(t) for e1, t in acc.items()}


def recursion_lmk(psi: System, phi: System, points, ell: int, m: int, k: int,
                  max_degree: int, max_n: int, table: Optional[List[Potential]] = None) -> Dict[int, Tensor]:
    """``omega_{l,m,k}`` per hbar degree, as tensors over side-tagged labels.

    A tagged label is ``(side, label)``; side 0 marks the first ``l`` (pole
    side) leaves and side 1 the last ``m`` leaves.
    """
    G = table if table is not None else lmk_potentials(psi, phi, points, max_degree, max_n)
    if k >= len(G):
        return {}
    out = {}
    for d in range(max_degree + 1):
        t = G[k].to_tagged(d, ell, m)
        if t.data:
            out[d] = t
    return out


def convolve_recursion(psi: System, phi: System, points, max_degree: int, max_n: int) -> System:
    """Resummation ``sum_k omega_{l,m,k}`` merged over leaf ownership."""
    G = lmk_potentials(psi, phi, points, max_degree, max_n)
    total = Potential()
    for g in G:
        total = total + g
    return total.to_system(max_n)


# ----------------------------------------------------------------------
# graph route

@dataclass(frozen=True)
class ConvGraph:
    """A convolution graph in canonical form.

    ``psi[i] = (arity, leaves)`` and ``phi[j] = (arity, column, leaves)``
    where ``column[i]`` is the number of internal edges between ``phi[j]``
    and ``psi[i]``; leaves are numbered from 1.
    """

    n: int
    psi: Tuple[Tuple[int, Tuple[int, ...]], ...]
    phi: Tuple[Tuple[int, Tuple[int, ...], Tuple[int, ...]], ...]
    aut: int

    @property
    def internal_edges(self) -> int:
        return sum(sum(col) for _, col, _ in self.phi)

    def edge_list(self) -> List[Tuple[int, int]]:
        """Internal edges as ``(psi index, phi index)``, repeated by multiplicity."""
        out = []
        for j, (_, col, _) in enumerate(self.phi):
            for i, c in enumerate(col):
                out.extend([(i, j)] * c)
        return out


def _canonical(psi, phi):
    """Canonical form and number of pole-side permutations realizing it."""
    V = len(psi)
    best, count = None, 0
    for perm in permutations(range(V)):
        p = tuple(psi[i] for i in perm)
        f = tuple(sorted((a, tuple(col[i] for i in perm), L) for a, col, L in phi))
        form = (p, f)
        if best is None or form < best:
            best, count = form, 1
        elif form == best:
            count += 1
    return best, count


def _aut_order(form, psi_perms: int, n_edges_mult: Iterable[int]) -> int:
    out = psi_perms
    for c in Counter(form[1]).values():
        out *= _factorial(c)
    for m in n_edges_mult:
        out *= _factorial(m)
    return out


def _factorial(n: int) -> int:
    out = 1
    for i in range(2, n + 1):
        out *= i
    return out


def _arity_multisets(avail: Mapping[int, int], budget: int, max_count: int) -> Iterator[Tuple[int, ...]]:
    """Nonincreasing arity tuples whose minimal hbar costs fit the budget."""
    arities = sorted(avail, reverse=True)

    def rec(start, left, acc):
        yield tuple(acc)
        if len(acc) >= max_count:
            return
        for idx in range(start, len(arities)):
            a = arities[idx]
            c = avail[a]
            if c <= left:
                acc.append(a)
                yield from rec(idx, left - c, acc)
                acc.pop()

    yield from rec(0, budget, [])


def _set_partitions(items: Sequence[int]) -> Iterator[List[Tuple[int, ...]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [(first,)] + part
        for i in range(len(part)):
            yield part[:i] + [tuple(sorted((first,) + part[i]))] + part[i + 1:]


def _vectors_upto(r: Tuple[int, ...]) -> Iterator[Tuple[int, ...]]:
    return product(*[range(x + 1) for x in r])


def _vector_partitions(r: Tuple[int, ...], ok: Callable[[Tuple[int, ...]], bool],
                       bound: Optional[Tuple[int, ...]] = None) -> Iterator[List[Tuple[int, ...]]]:
    """Multisets of nonzero vectors (nonincreasing order) summing to ``r``."""
    if not any(r):
        yield []
        return
    for v in sorted(_vectors_upto(r), reverse=True):
        if not any(v) or (bound is not None and v > bound) or not ok(v):
            continue
        rest = tuple(a - b for a, b in zip(r, v))
        for tail in _vector_partitions(rest, ok, v):
            yield [v] + tail


def _connected(V: int, phi) -> bool:
    W = len(phi)
    if V + W == 0:
        return False
    parent = list(range(V + W))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for j, (_, col, _) in enumerate(phi):
        for i, c in enumerate(col):
            if c:
                parent[find(V + j)] = find(i)
    return len({find(x) for x in range(V + W)}) == 1


def enumerate_graphs(n: int, hbar_order: int, psi_avail: Mapping[int, int], phi_avail: Mapping[int, int],
                     mode: str = "G", ell: Optional[int] = None) -> List[ConvGraph]:
    """All convolution graphs with ``n`` leaves up to an hbar budget.

    Parameters
    ----------
    n : int
        Number of leaves.
    hbar_order : int
        Budget for the sum of the minimal hbar degrees of the vertices.
    psi_avail, phi_avail : mapping
        Arity -> minimal hbar degree of a nonzero vertex decoration.
    mode : {"G", "G'", "Glm"}
        ``G`` puts leaves anywhere, ``G'`` only on holomorphic-side vertices,
        ``Glm`` puts leaves ``1..ell`` on pole-side vertices and the rest on
        holomorphic-side vertices.
    ell : int, optional
        The split for ``Glm``.

    Returns
    -------
    list of ConvGraph
        Canonical representatives in a deterministic order, each with its
        automorphism order (automorphisms fix every leaf and vertex type).

    Raises
    ------
    UngradedInput
        If a pole-side arity is available at hbar^0.
    """
    if any(d <= 0 for d in psi_avail.values()):
        raise UngradedInput("pole-side vertices need positive hbar degree")
    if any(d < 0 for d in phi_avail.values()):
        raise UngradedInput("holomorphic-side vertices must be regular in hbar")
    if mode not in ("G", "G'", "Glm"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "Glm" and (ell is None or not 0 <= ell <= n):
        raise ValueError("mode Glm needs 0 <= ell <= n")
    H = hbar_order
    leaves = list(range(1, n + 1))
    found: Dict[tuple, ConvGraph] = {}
    for arities in _arity_multisets(psi_avail, H, H):
        V = len(arities)
        cost_psi = sum(psi_avail[a] for a in arities)
        left = H - cost_psi
        if mode == "G":
            choices = [list(range(V)) + [None]] * n
        elif mode == "G'":
            choices = [[None]] * n
        else:
            if ell and not V:
                continue
            choices = [list(range(V))] * ell + [[None]] * (n - ell)
        for assign in product(*choices):
            counts = [0] * V
            for a in assign:
                if a is not None:
                    counts[a] += 1
            if any(c > a for c, a in zip(counts, arities)):
                continue
            r = tuple(a - c for a, c in zip(arities, counts))
            psi_leaves = [tuple(l for l, a in zip(leaves, assign) if a == i) for i in range(V)]
            phi_leaf_list = [l for l, a in zip(leaves, assign) if a is None]
            for blocks in _set_partitions(phi_leaf_list):
                _place_blocks(blocks, r, arities, psi_leaves, phi_avail, left, n, found)
    return [found[k] for k in sorted(found)]


def _place_blocks(blocks, r, arities, psi_leaves, phi_avail, budget, n, found):
    V = len(arities)

    def rec(idx, r_left, spent, acc):
        if idx == len(blocks):
            def ok(v):
                a = sum(v)
                return a in phi_avail

            for cols in _vector_partitions(r_left, ok):
                cost = spent + sum(phi_avail[sum(c)] for c in cols)
                if cost > budget:
                    continue
                phi = list(acc) + [(sum(c), c, ()) for c in cols]
                _record(arities, psi_leaves, phi, n, found)
            return
        B = blocks[idx]
        for v in sorted(_vectors_upto(r_left)):
            a = sum(v) + len(B)
            if a not in phi_avail:
                continue
            c = phi_avail[a]
            if spent + c > budget:
                continue
            nr = tuple(x - y for x, y in zip(r_left, v))
            acc.append((a, tuple(v), tuple(B)))
            rec(idx + 1, nr, spent + c, acc)
            acc.pop()

    rec(0, r, 0, [])


def _record(arities, psi_leaves, phi, n, found):
    V = len(arities)
    if not _connected(V, phi):
        return
    psi = [(a, L) for a, L in zip(arities, psi_leaves)]
    form, perms = _canonical(psi, phi)
    if form in found:
        return
    mults = [c for _, col, _ in form[1] for c in col if c]
    aut = _aut_order(form, perms, mults)
    found[form] = ConvGraph(n, form[0], form[1], aut)


def graph_weight(graph: ConvGraph, psi: System, phi: System, points, max_degree: int) -> Dict[int, Dict[tuple, object]]:
    """Weight ``w(Gamma)/|Aut(Gamma)|`` per hbar degree as ordered tensors over the leaves.

    Vertices are decorated by every hbar degree of ``psi~_m`` / ``phi~_m``
    whose total stays within ``max_degree``; internal edges contract a
    pole-side slot with a holomorphic-side slot by the star pairing.
    """
    pts = tuple(sorted(to_q(q) for q in points))
    verts = [(PSI, i, a) for i, (a, _) in enumerate(graph.psi)] + \
            [(PHI, j, a) for j, (a, _, _) in enumerate(graph.phi)]
    systems = {PSI: psi, PHI: phi}
    options = []
    for side, _, a in verts:
        ds = [d for d in range(max_degree + 1) if systems[side][(d, a)].data]
        options.append(ds)
    out: Dict[int, Dict[tuple, object]] = {}
    inv_aut = ONE / graph.aut
    for degs in product(*options):
        total = sum(degs)
        if total > max_degree:
            continue
        tensors = [systems[side][(d, a)] for (side, _, a), d in zip(verts, degs)]
        w = _contract_graph(graph, tensors, pts)
        if not w:
            continue
        slot = out.setdefault(total, {})
        for k, v in w.items():
            s = slot.get(k, ZERO) + v * inv_aut
            if s:
                slot[k] = s
            else:
                slot.pop(k, None)
    return {d: t for d, t in out.items() if t}


def _contract_graph(graph: ConvGraph, tensors: List[Tensor], pts) -> Dict[tuple, object]:
    """Contract all internal edges; pole-side tensors are expanded, holomorphic-side ones stay symmetric.

    Each holomorphic-side vertex sums its symmetric coefficient over the
    distinct arrangements of a key into (edge slots, leaf slots), reading the
    edge-slot labels against the pole-side labels fixed by the outer loop.
    """
    V = len(graph.psi)
    edges = graph.edge_list()
    psi_edges = [[e for e, (i, _) in enumerate(edges) if i == v] for v in range(V)]
    phi_edges = [[e for e, (_, j) in enumerate(edges) if j == w] for w in range(len(graph.phi))]
    psi_ordered = [list(ordered(t).items()) for t in tensors[:V]]
    phi_data = [t.data for t in tensors[V:]]
    cache: Dict[tuple, Dict[tuple, object]] = {}

    def phi_vertex(w: int, e_psi: tuple) -> Dict[tuple, object]:
        key = (w, e_psi)
        if key in cache:
            return cache[key]
        res: Dict[tuple, object] = {}
        for M, c in phi_data[w].items():
            _assign(Counter(M), e_psi, 0, c, pts, res)
        cache[key] = {k: v for k, v in res.items() if v}
        return cache[key]

    out: Dict[tuple, object] = {}
    for choice in product(*psi_ordered):
        coef = ONE
        leaf_label: Dict[int, Label] = {}
        edge_label: Dict[int, Label] = {}
        for v, (lab, c) in enumerate(choice):
            coef = coef * c
            L = graph.psi[v][1]
            for l, e in zip(L, lab):
                leaf_label[l] = e
            for eid, e in zip(psi_edges[v], lab[len(L):]):
                edge_label[eid] = e
        partials = []
        for w, (_, _, L) in enumerate(graph.phi):
            opts = phi_vertex(w, tuple(edge_label[e] for e in phi_edges[w]))
            if not opts:
                break
            partials.append((L, opts))
        else:
            for combo in product(*[list(opts.items()) for _, opts in partials]):
                val = coef
                labels = dict(leaf_label)
                for (L, _), (lab, c) in zip(partials, combo):
                    val = val * c
                    labels.update(zip(L, lab))
                k = tuple(labels[l] for l in range(1, graph.n + 1))
                s = out.get(k, ZERO) + val
                if s:
                    out[k] = s
                else:
                    out.pop(k, None)
    return out


def _assign(remaining: Counter, e_psi: tuple, idx: int, c, pts, res) -> None:
    """Place distinct labels of ``remaining`` on the edge slots, then all arrangements on the leaves."""
    if idx == len(e_psi):
        for arr in _multiset_arrangements(remaining):
            res[arr] = res.get(arr, ZERO) + c
        return
    for e1 in sorted(remaining):
        if not remaining[e1]:
            continue
        b = pairing(e_psi[idx], e1, pts)
        if not b:
            continue
        remaining[e1] -= 1
        _assign(remaining, e_psi, idx + 1, c * b, pts, res)
        remaining[e1] += 1


def _multiset_arrangements(counts: Counter) -> Iterator[tuple]:
    """Distinct orderings of a multiset given as label counts."""
    labels = sorted(e for e, m in counts.items() if m)
    total = sum(counts[e] for e in labels)
    left = {e: counts[e] for e in labels}
    acc: List[Label] = []

    def rec():
        if len(acc) == total:
            yield tuple(acc)
            return
        for e in labels:
            if left[e]:
                left[e] -= 1
                acc.append(e)
                yield from rec()
                acc.pop()
                left[e] += 1

    yield from rec()


def convolve_graphs(psi: System, phi: System, points, max_degree: int, max_n: int,
                    graphs: Optional[Dict[int, List[ConvGraph]]] = None) -> System:
    """Convolution as the weighted sum over graphs (independent oracle route)."""
    _check_grading(psi, phi)
    pts = tuple(sorted(to_q(q) for q in points))
    _check_points(phi, pts)
    pa = {n: ds[0] for n, ds in availability(psi.restrict(max_degree)).items()}
    fa = {n: ds[0] for n, ds in availability(phi.restrict(max_degree)).items()}
    out = System()
    for n in range(1, max_n + 1):
        gs = graphs[n] if graphs is not None else enumerate_graphs(n, max_degree, pa, fa)
        acc: Dict[int, Dict[tuple, object]] = {}
        for g in gs:
            for d, w in graph_weight(g, psi, phi, pts, max_degree).items():
                slot = acc.setdefault(d, {})
                for k, v in w.items():
                    s = slot.get(k, ZERO) + v
                    if s:
                        slot[k] = s
                    else:
                        slot.pop(k, None)
        for d, data in acc.items():
            out[(d, n)] = Tensor(n, {k: v for k, v in data.items() if list(k) == sorted(k)})
    return out


def convolve(psi: System, phi: System, points, max_degree: int, max_n: int, method: str = "moyal") -> System:
    """Convolved system ``omega~`` up to ``hbar**max_degree`` and arity ``max_n``.

    Parameters
    ----------
    psi : System
        Tilde-form pole-side system (poles only at ``points``, hbar >= 1).
    phi : System
        Tilde-form holomorphic-side system (regular at ``points``, hbar >= 0).
    points : iterable
        Key points where residues are taken.
    max_degree, max_n : int
        Caps.
    method : {"moyal", "graphs", "recursion"}
        Computation route; all three agree exactly.

    Returns
    -------
    System
        The convolved system (tilde form).

    Raises
    ------
    UngradedInput
        If neither finiteness hypothesis holds.
    BasisMismatch
        If ``phi`` has a pole at a key point.
    """
    if method == "moyal":
        return convolve_moyal(psi, phi, points, max_degree, max_n)
    if method == "graphs":
        return convolve_graphs(psi, phi, points, max_degree, max_n)
    if method == "recursion":
        return convolve_recursion(psi, phi, points, max_degree, max_n)
    raise ValueError(f"unknown method {method!r}")


# ----------------------------------------------------------------------
# blobbed topological recursion

def tilde_form(system: System, B: BergmanKernel) -> System:
    """Subtract ``B`` from the ``(0, 2)`` entry."""
    out = system.copy()
    t = system[(0, 2)]
    if t.diag or (0, 2) in system:
        if not t.diag:
            raise ValueError("the (0, 2) entry lacks the diagonal kernel")
        out[(0, 2)] = t - B.as_entry()
    return out


def with_kernel(system: System, B: BergmanKernel) -> System:
    """Add ``B`` back to the ``(0, 2)`` entry of a tilde-form system."""
    out = system.copy()
    out[(0, 2)] = system[(0, 2)] + B.as_entry()
    return out


def trivial_blobs(B0: Optional[BergmanKernel] = None) -> System:
    """Blobs ``phi_n = delta_{n,2} B0``."""
    B0 = B0 or BergmanKernel.standard()
    return System({(0, 2): B0.as_entry()})


def blobbed_tr(spec: SpectralCurveSpec, blobs: System, B: Optional[BergmanKernel], max_degree: int,
               max_n: int, method: str = "moyal", psi: Optional[System] = None) -> System:
    """Blobbed topological recursion.

    Parameters
    ----------
    spec : SpectralCurveSpec
        Curve data with the key points.
    blobs : System
        Blob system; its ``(0, 2)`` entry carries the diagonal kernel.
    B : BergmanKernel or None
        Kernel used by the recursion (``None`` for the standard one).
    max_degree, max_n : int
        Output caps.
    method : str
        Convolution route (see :func:`convolve`).
    psi : System, optional
        Precomputed recursion system for ``B``.

    Returns
    -------
    System
        ``omega = conv(psi^B - B, phi - B) + B``; ``omega_2^<0> = phi_2^<0>``.
    """
    B = B or BergmanKernel.standard()
    if not blobs[(0, 2)].diag:
        raise ValueError("blob (0, 2) entry must carry the diagonal kernel")
    if psi is None:
        psi = gentr_system(spec, B, max_degree, max_degree + 2)
    psi_t = tilde_form(psi, B)
    phi_t = tilde_form(blobs.restrict(max_degree), B)
    omega_t = convolve(psi_t, phi_t, spec.locations, max_degree, max_n, method)
    out = with_kernel(omega_t, B)
    out.meta["max_n"] = max_n
    return out


def b_independence_check(spec: SpectralCurveSpec, blobs: System, B1: BergmanKernel, B2: BergmanKernel,
                         max_degree: int, max_n: int, method: str = "moyal") -> dict:
    """Compare blobbed recursion run with two kernels; report the first difference."""
    a = blobbed_tr(spec, blobs, B1, max_degree, max_n, method)
    b = blobbed_tr(spec, blobs, B2, max_degree, max_n, method)
    diff = a.first_difference(b)
    report = {"status": "pass" if diff is None else "fail", "entries": len(a.entries)}
    if diff is not None:
        report["first_difference"] = _diff_record(diff)
    return report


def _diff_record(diff) -> dict:
    from .tensors import label_str

    dn, key, x, y = diff
    return {"entry": list(dn), "key": [label_str(e) if isinstance(e, tuple) else str(e) for e in key],
            "left": str(x), "right": str(y)}


# ----------------------------------------------------------------------
# deformation of the kernel

def deformation_delta_psi(spec: SpectralCurveSpec, B: Optional[BergmanKernel], delta: BergmanKernel,
                          g: int, n: int, system: Optional[System] = None) -> Tensor:
    """First-order change of ``psi^{(g)}_n`` under ``B -> B + eps*Delta B``.

    Parameters
    ----------
    spec : SpectralCurveSpec
        Curve data.
    B : BergmanKernel or None
        Base kernel.
    delta : BergmanKernel
        ``Delta B`` (its polynomial part is used).
    g, n : int
        Target entry.
    system : System, optional
        Precomputed recursion system for ``B`` containing the needed entries.

    Returns
    -------
    Tensor
        The single-residue term (applied in every slot) plus half the
        double-residue term on ``psi^{(g-1)}_{n+2}`` and on stable products.
    """
    B = B or BergmanKernel.standard()
    d = 2 * g - 2 + n
    if system is None:
        system = gentr_system(spec, B, d, n + 2)
    beta = delta.delta
    if not beta:
        return Tensor(n)
    pts = spec.locations
    H = max(d, 0)

    def pot(gg, nn):
        dd = 2 * gg - 2 + nn
        if gg < 0 or nn < 1 or dd <= 0:
            return Potential()
        t = system[(dd, nn)]
        if t.diag:
            t = t.without_diag()
        return Potential.from_system(System({(dd, nn): t}), PSI)

    def lam(P: Potential, i: int) -> Potential:
        # contract one slot with eta_i by the star pairing
        w = {}
        for v in P.variables():
            val = pairing(v[1], hol(i), pts)
            if val:
                w[v] = val
        return P.contract(w)

    P = pot(g, n)
    acc = Potential()
    half = to_q("1/2")
    for (i, j), bij in sorted(beta.items()):
        acc = acc + lam(P, i).times_var((PSI, hol(j)), bij)
        acc = acc + lam(lam(pot(g - 1, n + 2), i), j).scale(bij * half)
        for g1 in range(g + 1):
            g2 = g - g1
            for a in range(n + 1):
                b_ = n - a
                if 2 * g1 - 2 + a + 1 <= 0 or 2 * g2 - 2 + b_ + 1 <= 0:
                    continue
                left = lam(pot(g1, a + 1), i)
                right = lam(pot(g2, b_ + 1), j)
                if left and right:
                    acc = acc + left.mul(right).scale(bij * half)
    out = acc.to_system()
    return out[(H, n)] if (H, n) in out else Tensor(n)


# ----------------------------------------------------------------------
# duality

def duality_check(psi: System, psi_points, phi: System, phi_points, max_degree: int, max_n: int,
                  method: str = "moyal") -> dict:
    """Compare ``conv(psi, phi)`` at ``psi_points`` with ``conv(phi, psi)`` at ``phi_points``."""
    P = {to_q(q) for q in psi_points}
    Pv = {to_q(q) for q in phi_points}
    if P & Pv:
        raise OverlappingPoleSets(f"pole sets share {sorted(P & Pv)}")
    a = convolve(psi, phi, sorted(P), max_degree, max_n, method)
    b = convolve(phi, psi, sorted(Pv), max_degree, max_n, method)
    diff = a.first_difference(b)
    report = {"status": "pass" if diff is None else "fail", "entries": len(a.entries)}
    if diff is not None:
        report["first_difference"] = _diff_record(diff)
    return report


__all__ = [
    "Potential", "ConvGraph", "PSI", "PHI", "pairing_matrix", "availability", "max_internal_edges",
    "moyal_convolve", "convolve_moyal", "lmk_potentials", "recursion_lmk", "convolve_recursion",
    "enumerate_graphs", "graph_weight", "convolve_graphs", "convolve", "tilde_form", "with_kernel",
    "trivial_blobs", "blobbed_tr", "b_independence_check", "deformation_delta_psi", "duality_check",
]
