"""Generalized topological recursion by loop equations plus projection.

All local computations happen at one key point ``q`` in ``zeta = z - q``.
Objects that depend on the flow time ``t = u*hbar/2`` are kept as graded
dictionaries of function jets:

* ``(a, d)`` grading: ``t**a hbar**d`` where ``d`` is the hbar degree carried
  by the differentials themselves;
* ``(alpha, h)`` grading: ``u**alpha hbar**h``, obtained from ``(a, d)`` via
  ``t**a = u**a hbar**a 2**-a``.

Spectator slots are handled by coefficient extraction: for a sorted tuple
``K`` of pole labels we compute the coefficient of ``prod e_i(p_i)`` in the
loop expression, so every quantity is a scalar-coefficient jet in ``p``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from itertools import combinations_with_replacement
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .curve import BergmanKernel, KeyPoint, SpectralCurveSpec
from .errors import (
    DegenerateCurve,
    NonzeroResidueAtKeyPoint,
    SingularLinearSystem,
    TruncationInsufficient,
)
from .jets import FUNCTION, INF, ONE_FORM, LaurentJet
from .linalg import solve
from .rational import ONE, ZERO, to_q
from .tensors import Key, Label, System, Tensor, genus_of, label_jet, orderings, pole, topological_degree

log = logging.getLogger(__name__)

Graded = Dict[Tuple[int, int], LaurentJet]

_HALF = to_q("1/2")


def _fact(n: int):
    return to_q(math.factorial(n))


# ----------------------------------------------------------------------
# graded helpers

def _gadd(acc: Graded, key, jet: LaurentJet) -> None:
    if jet.is_zero():
        return
    cur = acc.get(key)
    acc[key] = jet if cur is None else cur + jet


def _gmul(A: Graded, B: Graded, ok) -> Graded:
    out: Graded = {}
    for (a1, d1), j1 in A.items():
        for (a2, d2), j2 in B.items():
            key = (a1 + a2, d1 + d2)
            if ok(key):
                _gadd(out, key, j1 * j2)
    return out


def _gexp(T: Graded, ok, one: LaurentJet) -> Graded:
    """``exp(T)`` for a graded object without a (0, 0) component."""
    out: Graded = {(0, 0): one}
    power: Graded = {(0, 0): one}
    k = 0
    while True:
        k += 1
        power = _gmul(power, T, ok)
        if not power:
            break
        inv = ONE / _fact(k)
        for key, j in power.items():
            _gadd(out, key, j.scale(inv))
    return out


def _to_uh(A: Graded) -> Graded:
    out: Graded = {}
    for (a, d), j in A.items():
        _gadd(out, (a, a + d), j.scale(to_q(2) ** (-a)))
    return out


def _tmul(A: Dict[int, LaurentJet], B: Dict[int, LaurentJet], amax: int) -> Dict[int, LaurentJet]:
    out: Dict[int, LaurentJet] = {}
    for a, x in A.items():
        for b, y in B.items():
            if a + b <= amax:
                j = x * y
                if not j.is_zero():
                    out[a + b] = out[a + b] + j if a + b in out else j
    return out


# ----------------------------------------------------------------------
# local expansions at a key point

class LocalExpansion:
    """Flow chains ``d_x^k f`` and integrals at one key point, to absolute precision ``P``."""

    def __init__(self, kp: KeyPoint, P: int):
        self.kp = kp
        self.q = kp.location
        self.P = P
        self.base = (self.q, "z")
        self.xp = kp.xprime(P).with_weight(FUNCTION)
        self.yp = kp.yprime(P).with_weight(FUNCTION)
        if self.xp.is_zero() or self.yp.is_zero():
            raise TruncationInsufficient(f"dx or dy vanishes to the known order at {self.q}")
        self.one = LaurentJet(0, [ONE], INF, FUNCTION, self.base)
        self._chains: Dict[object, List[LaurentJet]] = {}
        self._I: Dict[Label, Dict[int, LaurentJet]] = {}
        self._special: Dict[int, Dict[int, LaurentJet]] = {}
        self._pr: Dict[int, Dict[int, LaurentJet]] = {}

    def dx(self, f: LaurentJet) -> LaurentJet:
        df = f.derivative().with_weight(FUNCTION)
        return df.divide(self.xp, self.P)

    def chain(self, key, seed_fn, n: int) -> List[LaurentJet]:
        """``[f, d_x f, ..., d_x^n f]`` for the seed registered under ``key``."""
        ch = self._chains.get(key)
        if ch is None:
            ch = [seed_fn()]
            self._chains[key] = ch
        while len(ch) <= n:
            ch.append(self.dx(ch[-1]))
        return ch

    def label_fn(self, label: Label) -> LaurentJet:
        return label_jet(label, self.q, self.P).with_weight(FUNCTION)

    def integral(self, label: Label, amax: int) -> Dict[int, LaurentJet]:
        """``int_{q-}^{q+} label`` as ``{a: coefficient of t**a}`` (odd ``a`` only)."""
        cached = self._I.get(label)
        if cached is not None and cached.get("amax", -1) >= amax:
            return cached["series"]
        ch = self.chain(("I", label), lambda: self.label_fn(label).divide(self.xp, self.P), amax)
        series = {}
        for a in range(1, amax + 1, 2):
            j = ch[a - 1].scale(2 / _fact(a))
            if not j.is_zero():
                series[a] = j
        self._I[label] = {"amax": amax, "series": series}
        return series

    def special(self, j: int, amax: int) -> Dict[int, LaurentJet]:
        """``zeta(q+)**j - zeta(q-)**j`` as a t-series (diagonal kernel term)."""
        ch = self.chain(("Z", j), lambda: LaurentJet(j, [ONE], INF, FUNCTION, self.base), amax)
        series = {}
        for a in range(1, amax + 1, 2):
            s = ch[a].scale(2 / _fact(a))
            if not s.is_zero():
                series[a] = s
        return series

    def prefactor(self, amax: int) -> Dict[int, LaurentJet]:
        """``Pr(t)`` with ``sqrt(dz+ dz-)/(z+ - z-) = Pr/(2t) dzeta``."""
        if amax in self._pr:
            return self._pr[amax]
        ch = self.chain(("Z", 1), lambda: LaurentJet(1, [ONE], INF, FUNCTION, self.base), amax + 1)
        dplus = {a: ch[a].derivative().with_weight(FUNCTION).scale(1 / _fact(a))
                 for a in range(0, amax + 1)}
        dminus = {a: (j if a % 2 == 0 else -j) for a, j in dplus.items()}
        prod = _tmul(dplus, dminus, amax)
        X = {a: j for a, j in prod.items() if a > 0 and not j.is_zero()}
        root = {0: self.one}
        power = {0: self.one}
        m = 0
        coef = ONE
        while True:
            m += 1
            power = _tmul(power, X, amax)
            if not power:
                break
            coef = coef * (_HALF - (m - 1)) / m
            for a, j in power.items():
                s = j.scale(coef)
                root[a] = root[a] + s if a in root else s
        # 1/Delta with Delta = sum_{a odd} t^(a-1)/a! d_x^a zeta and Delta_0 = 1/x'
        Y = {}
        for a in range(3, amax + 2, 2):
            j = (ch[a] * self.xp).scale(1 / _fact(a))
            if not j.is_zero():
                Y[a - 1] = j
        inv = {0: self.one}
        power = {0: self.one}
        sign = ONE
        while True:
            power = _tmul(power, Y, amax)
            if not power:
                break
            sign = -sign
            for a, j in power.items():
                s = j.scale(sign)
                inv[a] = inv[a] + s if a in inv else s
        inv = {a: j * self.xp for a, j in inv.items()}
        pr = _tmul(root, inv, amax)
        self._pr[amax] = pr
        return pr

    def y_flow_terms(self, jmax: int) -> Dict[int, LaurentJet]:
        """``{2j: d_x^{2j} y}`` for ``1 <= j <= jmax``."""
        if jmax < 1:
            return {}
        ch = self.chain(("Y",), lambda: self.yp.divide(self.xp, self.P), 2 * jmax - 1)
        return {2 * j: ch[2 * j - 1] for j in range(1, jmax + 1)}

    def minus_d_over_dy(self, f: LaurentJet) -> LaurentJet:
        """``alpha -> -d(alpha/dy)`` on the coefficient of ``dzeta``."""
        return -(f.divide(self.yp, self.P).derivative().with_weight(FUNCTION))


# ----------------------------------------------------------------------
# the loop operator

class LoopContext:
    """Everything needed to evaluate loop expressions at one point and hbar order.

    Parameters
    ----------
    local : LocalExpansion
        Expansions at the key point.
    system : System
        Known differentials (standard labels; ``(0, 2)`` holds the regular part).
    D : int
        The hbar order of the loop expression.
    """

    def __init__(self, local: LocalExpansion, system: System, D: int):
        self.local = local
        self.system = system
        self.D = D
        self.H = D + 1
        self._ok_ad = lambda key: key[0] + key[1] <= self.H
        self._ok_uh = lambda key: key[1] <= self.H
        self._prodI: Dict[Key, Dict[int, LaurentJet]] = {(): {0: local.one}}
        self._T: Dict[Key, Graded] = {}
        self._E: Dict[Key, Graded] = {}
        self._index = self._build_index()
        self._C: Optional[Graded] = None

    def _build_index(self):
        """``sub-key S -> list of (d, k, rest, coefficient)`` over stored entries."""
        idx: Dict[Key, list] = {}
        for (d, n), t in self.system.items():
            for key, c in t.data.items():
                # each integrated slot costs at least one power of t
                for m in range(0, n):
                    k = n - m
                    if k + d > self.H:
                        continue
                    for S in _sub_multisets(key, m):
                        if any(e[0] != "p" or e[2] < 2 for e in S):
                            continue
                        rest = _minus(key, S)
                        idx.setdefault(S, []).append((d, k, rest, c))
        return idx

    def prod_integrals(self, F: Key) -> Dict[int, LaurentJet]:
        got = self._prodI.get(F)
        if got is not None:
            return got
        head = self.prod_integrals(F[:-1])
        out = _tmul(head, self.local.integral(F[-1], self.H), self.H)
        self._prodI[F] = out
        return out

    def T(self, S: Key) -> Graded:
        """Coefficient of ``prod_{e in S} e(p_e)`` in ``T_{|S|}(q+, q-; .)``."""
        got = self._T.get(S)
        if got is not None:
            return got
        out: Graded = {}
        for d, k, rest, c in self._index.get(S, ()):
            series = self.prod_integrals(rest)
            w = c * orderings(rest) / _fact(k)
            for a, j in series.items():
                if a + d <= self.H:
                    _gadd(out, (a, d), j.scale(w))
        if len(S) == 1:
            e = S[0]
            if e[0] == "p" and e[1] == self.local.q and e[2] >= 2:
                for a, j in self.local.special(e[2] - 1, self.H).items():
                    _gadd(out, (a, 0), j)
        self._T[S] = out
        return out

    def E(self, K: Key) -> Graded:
        """Sum over set partitions of the spectators of products of ``T`` blocks."""
        got = self._E.get(K)
        if got is not None:
            return got
        if not K:
            out = {(0, 0): self.local.one}
            self._E[K] = out
            return out
        first = K[0]
        counts = Counter(K)
        out: Graded = {}
        for S, ways in _blocks_containing(first, counts):
            TS = self.T(S)
            if not TS:
                continue
            rest = _minus(K, S)
            ER = self.E(rest)
            if not ER:
                continue
            prod = _gmul(TS, ER, self._ok_ad)
            for key, j in prod.items():
                _gadd(out, key, j.scale(ways) if ways != 1 else j)
        self._E[K] = out
        return out

    def common(self) -> Graded:
        """Prefactor times ``exp(T_0)`` times the y-flow exponential, in (u, hbar) grading."""
        if self._C is not None:
            return self._C
        loc = self.local
        H = self.H
        pr = loc.prefactor(H + 1)
        pref: Graded = {}
        for a, j in pr.items():
            if a - 1 <= H:
                _gadd(pref, (a - 1, a - 1), j.scale(to_q(2) ** (-a)))
        T0 = self.T(())
        eT0 = _to_uh(_gexp(T0, self._ok_ad, loc.one))
        S: Graded = {}
        for two_j, f in loc.y_flow_terms(H // 2).items():
            j = two_j // 2
            _gadd(S, (2 * j + 1, 2 * j), f.scale(1 / (to_q(4) ** j * _fact(2 * j + 1))))
        eS = _gexp(S, self._ok_uh, loc.one)
        C = _gmul(pref, _gmul(eT0, eS, self._ok_uh), lambda key: key[1] <= self.D)
        self._C = C
        return C

    def loop_jet(self, K: Key) -> LaurentJet:
        """The loop expression at hbar order ``D`` for spectators ``K`` (coefficient of dzeta)."""
        C = self.common()
        E = _to_uh(self.E(tuple(K)))
        by_r: Dict[int, LaurentJet] = {}
        for (a1, h1), j1 in C.items():
            for (a2, h2), j2 in E.items():
                if h1 + h2 != self.D:
                    continue
                r = a1 + a2
                if r < 0:
                    continue
                j = j1 * j2
                if not j.is_zero():
                    by_r[r] = by_r[r] + j if r in by_r else j
        total = LaurentJet(0, [], INF, FUNCTION, self.local.base)
        for r in sorted(by_r):
            j = by_r[r]
            for _ in range(r):
                j = self.local.minus_d_over_dy(j)
            total = total + j
        return total


def _sub_multisets(key: Key, m: int):
    """Distinct sorted sub-multisets of size ``m``."""
    seen = set()
    from itertools import combinations

    for idx in combinations(range(len(key)), m):
        S = tuple(key[i] for i in idx)
        if S not in seen:
            seen.add(S)
            yield S


def _minus(key: Key, S: Key) -> Key:
    rest = list(key)
    for e in S:
        rest.remove(e)
    return tuple(rest)


def _blocks_containing(first, counts: Counter):
    """Sub-multisets containing ``first`` with the number of position choices."""
    labels = sorted(counts)
    choices = []
    for e in labels:
        lo = 1 if e == first else 0
        choices.append([(s, math.comb(counts[e] - lo, s - lo)) for s in range(lo, counts[e] + 1)])
    from itertools import product

    for combo in product(*choices):
        S = []
        ways = 1
        for e, (s, w) in zip(labels, combo):
            S.extend([e] * s)
            ways *= w
        yield tuple(S), ways


# ----------------------------------------------------------------------
# the solver

class GenTREngine:
    """Stateful solver caching local expansions across hbar levels.

    Parameters
    ----------
    spec : SpectralCurveSpec
        Curve data; every key point participates.
    B : BergmanKernel
        Bergman kernel (standard plus a symmetric polynomial perturbation).
    pole_bound : int, optional
        Override for the weight bound on unknown keys.
    """

    def __init__(self, spec: SpectralCurveSpec, B: Optional[BergmanKernel] = None,
                 pole_bound: Optional[int] = None, precision: Optional[int] = None):
        self.spec = spec
        self.B = B or BergmanKernel.standard()
        self.pole_bound = pole_bound
        self.precision = precision
        self.system = System({(0, 2): self.B.as_entry()})
        self._locals: Dict[Tuple, LocalExpansion] = {}
        self.stats: Dict[str, int] = {"retries": 0}

    # bounds ----------------------------------------------------------
    def weight_bound(self, g: int, n: int) -> int:
        if self.pole_bound is not None:
            return self.pole_bound
        m = max(kp.r + kp.s for kp in self.spec.key_points)
        return n + m * topological_degree(g, n)

    def _local(self, kp: KeyPoint, P: int) -> LocalExpansion:
        key = (kp.location, P)
        loc = self._locals.get(key)
        if loc is None:
            loc = LocalExpansion(kp, P)
            self._locals[key] = loc
        return loc

    def _targets(self, q, nspect: int, W: int) -> List[Key]:
        labels = sorted(pole(p.location, k) for p in self.spec.key_points
                        for k in range(2, max(W - 2 * nspect, 2) + 1))
        labels = [e for e in labels if e >= pole(q, 2)]
        out = []
        budget = W - 2
        for K in combinations_with_replacement(labels, nspect):
            if sum(e[2] for e in K) <= budget:
                out.append(K)
        return out

    # main entry points -------------------------------------------------
    def required(self, g: int, n: int) -> List[Tuple[int, int]]:
        """(g', n') entries that feed the loop equation of ``omega^{(g)}_n``."""
        D = topological_degree(g, n)
        out = []
        for gp in range(0, g + 1):
            for m in range(0, n):
                for k in range(1, D + 3):
                    npr = k + m
                    dp = topological_degree(gp, npr)
                    if dp < 1 or dp >= D:
                        continue
                    if k + dp <= D + 1 - 0 and (gp, npr) != (g, n):
                        out.append((gp, npr))
        return sorted(set(out))

    def compute(self, g: int, n: int) -> Tensor:
        """``omega^{(g)}_n`` in standard labels, computing prerequisites as needed."""
        D = topological_degree(g, n)
        if D < 0 or (g, n) == (0, 1):
            return Tensor(n)
        if (g, n) == (0, 2):
            return self.B.as_entry()
        if (D, n) in self.system:
            return self.system[(D, n)]
        for dep in self.required(g, n):
            self.compute(*dep)
        t = self._solve(g, n)
        self.system[(D, n)] = t
        return t

    def compute_all(self, max_degree: int, max_n: Optional[int] = None) -> System:
        for d in range(1, max_degree + 1):
            for n in range(1, d + 3):
                g = genus_of(d, n)
                if g is None or (max_n is not None and n > max_n):
                    continue
                self.compute(g, n)
        return self.system

    def principal_parts(self, g: int, n: int, W: Optional[int] = None):
        """Principal parts of the first argument: ``{(q, K): {k: c}}`` over all targets."""
        W = W if W is not None else self.weight_bound(g, n)
        D = topological_degree(g, n)
        Dloop = D  # hbar order of the loop expression equals that of the unknown
        P = self.precision or (2 * W + 4 * (D + 2) + 6)
        while True:
            try:
                out = {}
                for kp in self.spec.key_points:
                    ctx = LoopContext(self._local(kp, P), self.system, Dloop)
                    for K in self._targets(kp.location, n - 1, W):
                        jet = ctx.loop_jet(K)
                        out[(kp.location, K)] = jet
                return out, P
            except TruncationInsufficient:
                if self.precision is not None or P > 400:
                    raise
                self.stats["retries"] += 1
                P *= 2
                log.debug("raising jet precision to %d", P)

    def _solve(self, g: int, n: int) -> Tensor:
        W = self.weight_bound(g, n)
        for attempt in range(2):
            jets, _ = self.principal_parts(g, n, W)
            coeffs: Dict[Key, object] = {}
            overflow = 0
            for (q, K), jet in jets.items():
                pp = jet.principal_part()
                kmax = max(W - sum(e[2] for e in K), 1)
                sol = _solve_principal(pp, q, kmax)
                if sol is None:
                    overflow = max(overflow, max(pp) + sum(e[2] for e in K))
                    break
                for k, c in sol.items():
                    if not c:
                        continue
                    head = pole(q, k)
                    if K and head > K[0]:
                        continue
                    full = tuple(sorted((head,) + K))
                    coeffs[full] = c
            if not overflow:
                return projection_apply(Tensor(n, coeffs), self.B, self.spec.locations)
            if attempt == 0 and self.pole_bound is None:
                log.info("pole bound %d too small for (%d,%d); raising to %d", W, g, n, overflow)
                W = overflow
                continue
        raise SingularLinearSystem(f"loop equations for ({g},{n}) are inconsistent with the pole bound")


def _solve_principal(pp: Dict[int, object], q, kmax: int) -> Optional[Dict[int, object]]:
    """Solve ``M c = -pp`` where ``M`` is the principal-part map of the ansatz.

    Returns ``None`` when the loop expression has poles beyond ``kmax``.
    """
    if pp and max(pp) > kmax:
        return None
    size = kmax
    # column j: the ansatz element dzeta/zeta^j; row k: coefficient of zeta^-k
    matrix = [[ONE if k == j else ZERO for j in range(1, size + 1)] for k in range(1, size + 1)]
    rhs = [-pp.get(k, ZERO) for k in range(1, size + 1)]
    if not any(rhs):
        return {}
    sol = solve(matrix, rhs)
    return {k: v for k, v in zip(range(1, size + 1), sol) if v}


def projection_apply(principal: Tensor, B: BergmanKernel, points: Iterable = ()) -> Tensor:
    """Rebuild a differential from the principal parts of its slots.

    Parameters
    ----------
    principal : Tensor
        All-pole tensor: the coefficient of ``prod dz/(z-q_i)^{k_i}`` read off
        the principal parts.  Holomorphic labels are dropped.
    B : BergmanKernel
        The kernel defining the projection ``sum_q res omega(p~) int_q^{p~} B(., p)``.
    points : iterable, optional
        Key points; pole labels elsewhere are treated as holomorphic input.

    Returns
    -------
    Tensor
        The projected differential in standard labels.

    Raises
    ------
    NonzeroResidueAtKeyPoint
        If some slot has a simple pole at a key point.
    """
    pts = {to_q(q) for q in points} if points else None
    data = {}
    for key, c in principal.data.items():
        if any(e[0] != "p" or (pts is not None and e[1] not in pts) for e in key):
            continue
        if any(e[2] == 1 for e in key):
            raise NonzeroResidueAtKeyPoint(f"simple pole in {key}")
        data[key] = c
    return Tensor(principal.n, data).substitute(lambda e: B.adapted(e[1], e[2]))


def gentr_solve(spec: SpectralCurveSpec, B: Optional[BergmanKernel], g: int, n: int,
                engine: Optional[GenTREngine] = None, pole_bound: Optional[int] = None) -> Tensor:
    """``omega^{(g)}_n`` of generalized topological recursion.

    Parameters
    ----------
    spec : SpectralCurveSpec
        Key points with local ``dx``, ``dy``.
    B : BergmanKernel or None
        Bergman kernel; ``None`` means the standard one.
    g, n : int
        Genus and arity.
    engine : GenTREngine, optional
        Reuse cached lower entries.
    pole_bound : int, optional
        Weight bound on unknown keys (default ``n + max(r+s)(2g-2+n)``); it is
        raised once automatically if the loop equations demand it.

    Returns
    -------
    Tensor
        Standard-label tensor; ``(0, 2)`` returns the regular part of ``B``
        with the diagonal flag set, unstable cases return an empty tensor.

    Raises
    ------
    SingularLinearSystem
        The loop equations admit no solution within the (raised) pole bound.
    TruncationInsufficient
        Jet precision could not be raised far enough.
    """
    eng = engine or GenTREngine(spec, B, pole_bound=pole_bound)
    return eng.compute(g, n)


def gentr_system(spec: SpectralCurveSpec, B: Optional[BergmanKernel], max_degree: int,
                 max_n: Optional[int] = None) -> System:
    """All entries with ``1 <= 2g-2+n <= max_degree`` plus ``(0, 2)``."""
    eng = GenTREngine(spec, B)
    eng.compute_all(max_degree, max_n)
    eng.system.meta["max_n"] = max_n
    return eng.system


def loop_operator_apply(system: System, spec: SpectralCurveSpec, q, n: int, D: int,
                        spectators: Sequence[Label] = (), precision: int = 48) -> LaurentJet:
    """Loop expression at hbar order ``D`` at key point ``q``.

    Returns the coefficient of ``prod spectators(p_i)`` as a one-form jet in
    ``p``; on a complete system its principal part vanishes.
    """
    K = tuple(sorted(spectators))
    if len(K) != n:
        raise ValueError("need one spectator label per extra argument")
    kp = spec.point(q)
    ctx = LoopContext(LocalExpansion(kp, precision), system, D)
    return ctx.loop_jet(K).with_weight(ONE_FORM)


# ----------------------------------------------------------------------
# the standard residue formula (independent oracle)

def ceo_oracle(spec: SpectralCurveSpec, B: Optional[BergmanKernel], g: int, n: int,
               cache: Optional[System] = None, precision: Optional[int] = None) -> Tensor:
    """``omega^{(g)}_n`` by the Chekhov-Eynard-Orantin residue formula.

    Parameters
    ----------
    spec : SpectralCurveSpec
        Every key point must be a simple zero of ``dx`` with ``dy`` nonzero.
    B : BergmanKernel or None
        Bergman kernel.
    g, n : int
        Genus and arity.
    cache : System, optional
        Entries already computed by this oracle, extended in place.

    Returns
    -------
    Tensor
        Standard-label tensor (``(0, 2)``: regular part of ``B`` with the
        diagonal flag; unstable cases: empty).

    Raises
    ------
    DegenerateCurve
        Some key point has ``(r, s) != (2, 1)``.
    """
    for kp in spec.key_points:
        if (kp.r, kp.s) != (2, 1):
            raise DegenerateCurve(f"key point {kp.location} has (r, s) = ({kp.r}, {kp.s})")
    B = B or BergmanKernel.standard()
    D = topological_degree(g, n)
    if D < 0 or (g, n) == (0, 1):
        return Tensor(n)
    if (g, n) == (0, 2):
        return B.as_entry()
    cache = cache if cache is not None else System()
    if (D, n) in cache:
        return cache[(D, n)]
    # lower entries first
    for gp in range(0, g + 1):
        for np_ in range(1, n + 2):
            dp = topological_degree(gp, np_)
            if 1 <= dp < D:
                ceo_oracle(spec, B, gp, np_, cache, precision)
    W = n + 3 * D
    P = precision or (2 * W + 12)
    while True:
        try:
            t = _ceo_compute(spec, B, g, n, cache, W, P)
            break
        except TruncationInsufficient:
            if precision is not None or P > 400:
                raise
            P *= 2
    cache[(D, n)] = t
    return t


def _ceo_compute(spec, B, g, n, cache: System, W: int, P: int) -> Tensor:
    coeffs: Dict[Key, object] = {}
    labels_all = sorted(pole(kp.location, k) for kp in spec.key_points
                        for k in range(2, max(W - 2 * (n - 1), 2) + 1))
    for kp in spec.key_points:
        oc = _CEOLocal(kp, B, P)
        for K in combinations_with_replacement(labels_all, n - 1):
            if sum(e[2] for e in K) > W - 2:
                continue
            bracket = oc.bracket(cache, g, K)
            if bracket is None:
                continue
            for j, kern in oc.kernels(W - sum(e[2] for e in K)).items():
                res = (kern * bracket).coefficient(-1)
                if res:
                    full = tuple(sorted((pole(kp.location, j + 1),) + K))
                    prev = coeffs.get(full)
                    # each full key arises once per choice of the p0 slot label
                    coeffs[full] = res if prev is None else prev
    return projection_apply(Tensor(n, coeffs), B, spec.locations)


class _CEOLocal:
    """Local data for the residue formula at one simple ramification point."""

    def __init__(self, kp: KeyPoint, B: BergmanKernel, P: int):
        self.kp = kp
        self.B = B
        self.q = kp.location
        self.P = P
        self.base = (self.q, "z")
        xp = kp.xprime(P + 4).with_weight(FUNCTION)
        yp = kp.yprime(P + 4).with_weight(FUNCTION)
        self.xp, self.yp = xp, yp
        # x and y as function jets vanishing at the point
        self.x = _integrate_fn(xp, P + 5)
        self.y = _integrate_fn(yp, P + 5)
        self.sigma = self._involution()
        self.dsigma = self.sigma.derivative().with_weight(FUNCTION)
        self._lab: Dict[Label, Tuple[LaurentJet, LaurentJet]] = {}
        self._kern: Dict[int, LaurentJet] = {}

    def _involution(self) -> LaurentJet:
        """``sigma(zeta)`` with ``x(sigma) = x(zeta)``, ``sigma = -zeta + O(zeta^2)``."""
        cs = self.x.terms()
        c2 = cs.get(2, ZERO)
        if not c2:
            raise DegenerateCurve("not a simple ramification point")
        P = self.P
        zeta = LaurentJet(1, [ONE], INF, FUNCTION, self.base)
        sigma = (-zeta).truncate(P)
        # h(s, z) = (x(s) - x(z))/(s - z) = sum_m c_m (s^m - z^m)/(s - z); solve h = 0
        for _ in range(P + 2):
            acc = LaurentJet(0, [], P, FUNCTION, self.base)
            for m, c in cs.items():
                if m < 3:
                    continue
                term = LaurentJet(0, [], INF, FUNCTION, self.base)
                spow = [LaurentJet(0, [ONE], INF, FUNCTION, self.base)]
                for i in range(1, m):
                    spow.append((spow[-1] * sigma).truncate(P))
                for i in range(m):
                    term = term + (spow[i] * zeta ** (m - 1 - i)).truncate(P)
                acc = acc + term.scale(c)
            new = (-zeta - acc.scale(1 / c2)).truncate(P)
            if new.agrees_with(sigma) and new.prec == sigma.prec:
                sigma = new
                break
            sigma = new
        return sigma

    def compose(self, f: LaurentJet) -> LaurentJet:
        """``f(sigma(zeta))`` for a Laurent jet ``f``."""
        P = self.P
        out = LaurentJet(0, [], P, FUNCTION, self.base)
        terms = f.terms()
        if not terms:
            return out
        lo = min(terms)
        inv = None
        if lo < 0:
            inv = LaurentJet(0, [ONE], INF, FUNCTION, self.base).divide(self.sigma, P)
        for e, c in terms.items():
            if e >= 0:
                piece = (self.sigma ** e).truncate(P) if e else LaurentJet(0, [ONE], INF, FUNCTION, self.base)
            else:
                piece = (inv ** (-e)).truncate(P)
            out = out + piece.scale(c)
        if f.prec != INF:
            out = out.truncate(f.prec)
        return out

    def label_pair(self, label: Label) -> Tuple[LaurentJet, LaurentJet]:
        """``(e(zeta), e(sigma(zeta)) sigma'(zeta))`` as coefficients of dzeta."""
        got = self._lab.get(label)
        if got is None:
            e = label_jet(label, self.q, self.P).with_weight(FUNCTION)
            got = (e, self.compose(e) * self.dsigma)
            self._lab[label] = got
        return got

    def b_pieces(self, label: Label):
        """Coefficient of ``label(p_i)`` in ``B(p, p_i)`` and ``B(sigma p, p_i)``."""
        if label[0] != "p" or label[1] != self.q or label[2] < 2:
            return None
        j = label[2] - 1
        f = LaurentJet(j - 1, [to_q(j)], INF, FUNCTION, self.base)
        return f, self.compose(f) * self.dsigma

    def bergman_diag(self) -> LaurentJet:
        """``B(zeta, sigma(zeta))`` as coefficient of dzeta^2 (standard part plus Delta B)."""
        zeta = LaurentJet(1, [ONE], INF, FUNCTION, self.base)
        diff = zeta - self.sigma
        std = self.dsigma.divide(diff * diff, self.P)
        extra = LaurentJet(0, [], INF, FUNCTION, self.base)
        for (i, j), b in self.B.beta:
            a = label_jet(("h", i), self.q, self.P).with_weight(FUNCTION)
            c = label_jet(("h", j), self.q, self.P).with_weight(FUNCTION)
            extra = extra + (a * self.compose(c) * self.dsigma).scale(b)
        return std + extra

    def kernels(self, jmax: int) -> Dict[int, LaurentJet]:
        """``(zeta^j - sigma^j)/(2 (y(zeta) - y(sigma)) x'(zeta))`` for ``1 <= j <= jmax``."""
        out = {}
        denom = None
        for j in range(1, jmax + 1):
            got = self._kern.get(j)
            if got is None:
                if denom is None:
                    denom = (self.y - self.compose(self.y)).scale(2) * self.xp
                zeta = LaurentJet(1, [ONE], INF, FUNCTION, self.base)
                num = zeta ** j - (self.sigma ** j).truncate(self.P)
                got = num.divide(denom, self.P)
                self._kern[j] = got
            out[j] = got
        return out

    def _omega_one_side(self, cache: System, g: int, K: Key, flip: bool) -> LaurentJet:
        """Coefficient of ``prod K(p_i)`` in ``omega^{(g)}_{|K|+1}(p or sigma p, p_K)``."""
        n1 = len(K) + 1
        zero = LaurentJet(0, [], INF, FUNCTION, self.base)
        if (g, n1) == (0, 2):
            pieces = self.b_pieces(K[0])
            if pieces is None:
                return zero
            return pieces[1] if flip else pieces[0]
        d = topological_degree(g, n1)
        if d < 1:
            return zero
        t = cache[(d, n1)]
        acc = zero
        for lab, c in _slot_coeffs(t, K).items():
            pair = self.label_pair(lab)
            acc = acc + (pair[1] if flip else pair[0]).scale(c)
        return acc

    def bracket(self, cache: System, g: int, K: Key) -> Optional[LaurentJet]:
        """``omega^{(g-1)}_{n+1}(p, sigma p, K) + sum' omega omega`` for spectator labels ``K``."""
        n = len(K)
        zero = LaurentJet(0, [], INF, FUNCTION, self.base)
        total = zero
        if g >= 1:
            if n == 0 and g == 1:
                total = total + self.bergman_diag()
            else:
                d = topological_degree(g - 1, n + 2)
                t = cache[(d, n + 2)]
                for (l1, l2), c in _two_slot_coeffs(t, K).items():
                    a = self.label_pair(l1)[0]
                    b = self.label_pair(l2)[1]
                    total = total + (a * b).scale(c)
        # splittings over (g1, I) x (g2, J)
        idx = list(range(n))
        from itertools import combinations

        for size in range(0, n + 1):
            for I in combinations(idx, size):
                J = [i for i in idx if i not in I]
                KI = tuple(K[i] for i in I)
                KJ = tuple(K[i] for i in J)
                for g1 in range(0, g + 1):
                    g2 = g - g1
                    if topological_degree(g1, size + 1) < 0 or (g1, size + 1) == (0, 1):
                        continue
                    if topological_degree(g2, len(J) + 1) < 0 or (g2, len(J) + 1) == (0, 1):
                        continue
                    a = self._omega_one_side(cache, g1, KI, False)
                    if a.is_zero():
                        continue
                    b = self._omega_one_side(cache, g2, KJ, True)
                    if b.is_zero():
                        continue
                    total = total + a * b
        return total


def _slot_coeffs(t: Tensor, K: Key) -> Dict[Label, object]:
    """``{label: coefficient}`` of ``label(p_0) prod K(p_i)`` in a symmetric tensor."""
    out = {}
    for key, c in t.data.items():
        rest = list(key)
        ok = True
        for e in K:
            if e in rest:
                rest.remove(e)
            else:
                ok = False
                break
        if ok and len(rest) == 1:
            out[rest[0]] = out.get(rest[0], ZERO) + c
    return out


def _two_slot_coeffs(t: Tensor, K: Key) -> Dict[Tuple[Label, Label], object]:
    """Ordered ``{(l1, l2): coefficient}`` with ``prod K(p_i)`` in the remaining slots."""
    out = {}
    for key, c in t.data.items():
        rest = list(key)
        ok = True
        for e in K:
            if e in rest:
                rest.remove(e)
            else:
                ok = False
                break
        if ok and len(rest) == 2:
            a, b = rest
            out[(a, b)] = c
            out[(b, a)] = c
    return out


def _integrate_fn(fprime: LaurentJet, P: int) -> LaurentJet:
    """Primitive vanishing at the point of a holomorphic function jet."""
    terms = {e + 1: c / (e + 1) for e, c in fprime.terms().items() if e < P}
    prec = min(fprime.prec + 1, P) if fprime.prec != INF else P
    return LaurentJet.from_dict(terms, prec, FUNCTION, fprime.base)


__all__ = [
    "GenTREngine", "LocalExpansion", "LoopContext", "gentr_solve", "gentr_system",
    "loop_operator_apply", "projection_apply", "ceo_oracle",
]
