"""Spectral curve data on the z-line, Bergman kernels and the elementary pairing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import BasisMismatch, DuplicateKeyPoint, TruncationInsufficient, ZeroLeadingCoefficient
from .jets import FUNCTION, INF, ONE_FORM, LaurentJet, primitive
from .ratfunc import RationalFunction
from .rational import ONE, ZERO, to_q
from .tensors import Label, Tensor, hol, label_jet, pole

DEFAULT_JET_PREC = 24


@dataclass(frozen=True)
class KeyPoint:
    """A key point ``z = location`` with the local jets of ``dx`` and ``dy``.

    The jets are stored as function jets of ``dx/dz`` and ``dy/dz`` in
    ``zeta = z - location``; ``r`` and ``s`` are the orders with
    ``dx ~ a zeta^(r-1) dz`` and ``dy ~ b zeta^(s-1) dz``.
    """

    location: object
    dx_jet: LaurentJet
    dy_jet: LaurentJet
    x_global: Optional[RationalFunction] = field(default=None, compare=False)
    y_global: Optional[RationalFunction] = field(default=None, compare=False)

    @property
    def r(self) -> int:
        return self.dx_jet.val + 1

    @property
    def s(self) -> int:
        return self.dy_jet.val + 1

    @property
    def special(self) -> bool:
        r, s = self.r, self.s
        return r + s > 0 and (r, s) != (1, 1)

    def xprime(self, prec) -> LaurentJet:
        """``dx/dz`` at the point, to absolute precision ``prec`` (exact if possible)."""
        return _derivative_jet(self.x_global, self.dx_jet, self.location, prec)

    def yprime(self, prec) -> LaurentJet:
        return _derivative_jet(self.y_global, self.dy_jet, self.location, prec)

    @classmethod
    def from_coefficients(cls, location, dx_order: int, dx_coeffs: Sequence,
                          dy_order: int, dy_coeffs: Sequence, prec=INF) -> "KeyPoint":
        """Build from raw jets ``dx = sum c_i zeta^(order+i) dzeta``."""
        loc = to_q(location)
        if not dx_coeffs or not to_q(dx_coeffs[0]):
            raise ZeroLeadingCoefficient(f"dx has zero leading coefficient at {loc}")
        if not dy_coeffs or not to_q(dy_coeffs[0]):
            raise ZeroLeadingCoefficient(f"dy has zero leading coefficient at {loc}")
        base = (loc, "z")
        dxj = LaurentJet(dx_order, [to_q(c) for c in dx_coeffs], prec, FUNCTION, base)
        dyj = LaurentJet(dy_order, [to_q(c) for c in dy_coeffs], prec, FUNCTION, base)
        return cls(loc, dxj, dyj)


def _derivative_jet(glob: Optional[RationalFunction], stored: LaurentJet, loc, prec) -> LaurentJet:
    if glob is not None:
        d = glob.derivative()
        if d.is_polynomial():
            return d.jet_at(loc, INF)
        return d.jet_at(loc, prec)
    if stored.prec != INF and stored.prec < prec:
        raise TruncationInsufficient(
            f"key point {loc}: jet known to order {stored.prec}, {prec} requested")
    return stored


@dataclass(frozen=True)
class SpectralCurveSpec:
    """Key points plus optional global ``x`` and ``y`` on the z-line (genus zero)."""

    key_points: Tuple[KeyPoint, ...]
    x: Optional[RationalFunction] = None
    y: Optional[RationalFunction] = None

    @classmethod
    def from_functions(cls, x, y, points: Iterable) -> "SpectralCurveSpec":
        """Curve from global rational (or polynomial coefficient list) ``x``, ``y``."""
        x = x if isinstance(x, RationalFunction) else RationalFunction(x)
        y = y if isinstance(y, RationalFunction) else RationalFunction(y)
        kps = []
        for q in points:
            q = to_q(q)
            dxj = _derivative_jet(x, None, q, DEFAULT_JET_PREC)
            dyj = _derivative_jet(y, None, q, DEFAULT_JET_PREC)
            if dxj.is_zero() or dyj.is_zero():
                raise ZeroLeadingCoefficient(f"dx or dy vanishes identically at {q}")
            kps.append(KeyPoint(q, dxj, dyj, x, y))
        return cls(tuple(kps), x, y)

    @property
    def locations(self) -> Tuple:
        return tuple(k.location for k in self.key_points)

    def point(self, q) -> KeyPoint:
        q = to_q(q)
        for k in self.key_points:
            if k.location == q:
                return k
        raise KeyError(q)

    def restrict_to(self, locations: Iterable) -> "SpectralCurveSpec":
        locs = {to_q(q) for q in locations}
        return SpectralCurveSpec(tuple(k for k in self.key_points if k.location in locs),
                                 self.x, self.y)


# the two reference curves used throughout the tests
def airy_curve() -> SpectralCurveSpec:
    return SpectralCurveSpec.from_functions([0, 0, 1], [0, 1], [0])


def cubic_curve(points=(-1, 1)) -> SpectralCurveSpec:
    """``x = z^3/3 - z``, ``y = z`` with key points at the zeros of ``dx``."""
    return SpectralCurveSpec.from_functions([0, -1, 0, "1/3"], [0, 1], points)


@dataclass(frozen=True)
class BergmanKernel:
    """``dz1 dz2/(z1-z2)^2 + sum beta_ij z1^(i-1) dz1 z2^(j-1) dz2``."""

    beta: Tuple[Tuple[Tuple[int, int], object], ...] = ()

    @classmethod
    def standard(cls) -> "BergmanKernel":
        return cls(())

    @classmethod
    def from_dict(cls, beta: Mapping[Tuple[int, int], object]) -> "BergmanKernel":
        clean: Dict[Tuple[int, int], object] = {}
        for (i, j), c in beta.items():
            if i < 1 or j < 1:
                raise ValueError("polynomial perturbation indices start at 1")
            c = to_q(c) if isinstance(c, (int, str)) else c
            if c:
                clean[(i, j)] = c
        for (i, j), c in clean.items():
            if clean.get((j, i), ZERO) != c:
                raise ValueError("perturbation of B must be symmetric")
        return cls(tuple(sorted(clean.items())))

    @property
    def delta(self) -> Dict[Tuple[int, int], object]:
        return dict(self.beta)

    def is_standard(self) -> bool:
        return not self.beta

    def scaled(self, c) -> "BergmanKernel":
        return BergmanKernel(tuple((ij, v * c) for ij, v in self.beta if v * c))

    def plus(self, other: "BergmanKernel") -> "BergmanKernel":
        d = self.delta
        for ij, v in other.beta:
            d[ij] = d.get(ij, ZERO) + v
        return BergmanKernel(tuple(sorted((k, v) for k, v in d.items() if v)))

    def delta_tensor(self) -> Tensor:
        """``Delta B`` as a 2-tensor in the holomorphic labels."""
        return Tensor(2, {(hol(i), hol(j)): c for (i, j), c in self.beta})

    def as_entry(self) -> Tensor:
        """The stored ``(0, 2)`` entry of a system with this kernel."""
        return self.delta_tensor().with_diag()

    def adapted(self, q, k: int) -> Dict[Label, object]:
        """Standard-basis expansion of ``res_{p~=q} dz~/(z~-q)^k int_q^{p~} B(., p)``."""
        q = to_q(q)
        if k < 2:
            return {}
        out: Dict[Label, object] = {pole(q, k): ONE}
        for (i, j), b in self.beta:
            if k - 1 <= i:
                c = b * to_q(math.comb(i, k - 1)) * q ** (i - k + 1) / i
                if c:
                    out[hol(j)] = out.get(hol(j), ZERO) + c
        return out


@dataclass(frozen=True)
class FormBasis:
    """Capped basis of pole and holomorphic one-forms."""

    points: Tuple
    max_pole: int
    max_hol: int

    def contains(self, label: Label) -> bool:
        if label[0] == "h":
            return 1 <= label[1] <= self.max_hol
        if label[0] == "p":
            return label[1] in self.points and 1 <= label[2] <= self.max_pole
        return False

    def check(self, tensor: Tensor) -> None:
        for e in tensor.labels():
            if not self.contains(e):
                raise BasisMismatch(f"label {e!r} is outside the declared basis caps")

    def labels(self) -> List[Label]:
        out = [hol(l) for l in range(1, self.max_hol + 1)]
        out += [pole(q, k) for q in self.points for k in range(1, self.max_pole + 1)]
        return sorted(out)


def validate_curve(spec: SpectralCurveSpec) -> dict:
    """Classify key points as special or not.

    Parameters
    ----------
    spec : SpectralCurveSpec
        Curve data to check.

    Returns
    -------
    dict
        ``{"points": [...], "special": [...], "remove": [...]}`` where each
        point record carries ``location``, ``r``, ``s`` and ``special``; the
        ``remove`` list holds non-special points that may be dropped.

    Raises
    ------
    DuplicateKeyPoint
        Two key points share a location.
    ZeroLeadingCoefficient
        ``dx`` or ``dy`` vanishes identically to the known order.
    """
    seen = set()
    records = []
    for kp in spec.key_points:
        if kp.location in seen:
            raise DuplicateKeyPoint(f"key point {kp.location} listed twice")
        seen.add(kp.location)
        if kp.dx_jet.is_zero() or kp.dy_jet.is_zero():
            raise ZeroLeadingCoefficient(f"dx or dy has no nonzero coefficient at {kp.location}")
        for glob, stored in ((spec.x, kp.dx_jet), (spec.y, kp.dy_jet)):
            if glob is not None and stored.prec != INF:
                fresh = glob.derivative().jet_at(kp.location, stored.prec)
                if not fresh.agrees_with(stored):
                    raise ValueError(f"stored jet at {kp.location} does not match the global function")
        records.append({"location": kp.location, "r": kp.r, "s": kp.s, "special": kp.special})
    if not records:
        raise ValueError("a curve needs at least one key point")
    return {
        "points": records,
        "special": [r["location"] for r in records if r["special"]],
        "remove": [r["location"] for r in records if not r["special"]],
    }


def bergman_integral(B: BergmanKernel, q, order: int) -> LaurentJet:
    """``int_q^{p~} B(., p)`` expanded in ``zeta~ = z~ - q`` up to ``order``.

    Returns a function jet in ``zeta~`` whose coefficients are one-forms in
    ``p``, each a 1-tensor over the standard labels.
    """
    q = to_q(q)
    if order < 0:
        raise TruncationInsufficient("order must be nonnegative")
    coeffs = [Tensor(1)]
    for j in range(1, order + 1):
        coeffs.append(Tensor(1, {(lab,): c for lab, c in B.adapted(q, j + 1).items()}))
    return LaurentJet(0, coeffs, order + 1, FUNCTION, (q, "z"))


def basis_pairing(q, k: int, l: int):
    """``res_{z=q} dz/(z-q)^k * int_q^z t^(l-1) dt``: the coefficient ``b_{k,l}``."""
    q = to_q(q)
    if k < 2 or k - 1 > l:
        return ZERO
    return to_q(math.comb(l, k - 1)) * q ** (l - k + 1) / l


@lru_cache(maxsize=None)
def pairing(e0: Label, e1: Label, points: Tuple) -> object:
    """``sum_{q in points} res_q e0 * int_q e1`` for basis labels.

    ``e1`` must be holomorphic at every point.
    """
    if e0[0] != "p" or e0[1] not in points:
        return ZERO
    q, k = e0[1], e0[2]
    if e1[0] == "p" and e1[1] in points:
        raise BasisMismatch(f"{e1!r} has a pole at a key point")
    if e1[0] == "h":
        return basis_pairing(q, k, e1[1])
    if k < 2:
        return ZERO
    prim = primitive(label_jet(e1, q, k), anchored=True)
    return prim.coefficient(k - 1)


def star_pairing(psi: Mapping[tuple, object], phi: Mapping[tuple, object], points,
                 psi_slot: int = 0, phi_slot: int = 0) -> Dict[tuple, object]:
    """Contract one slot of ``psi`` with one slot of ``phi`` by ``res * int``.

    Parameters
    ----------
    psi, phi : mapping
        Ordered (not necessarily symmetric) tensors, ``{label tuple: coefficient}``.
    points : iterable
        Key-point locations where residues are taken.
    psi_slot, phi_slot : int
        The contracted positions.

    Returns
    -------
    dict
        Ordered tensor on the remaining ``psi`` slots followed by the remaining
        ``phi`` slots.

    Raises
    ------
    BasisMismatch
        If a contracted ``phi`` label has a pole at a key point.
    """
    pts = tuple(sorted(to_q(q) for q in points))
    out: Dict[tuple, object] = {}
    for kp, cp in psi.items():
        e0 = kp[psi_slot]
        rest0 = kp[:psi_slot] + kp[psi_slot + 1:]
        for kf, cf in phi.items():
            e1 = kf[phi_slot]
            if e1[0] == "p" and e1[1] in pts:
                raise BasisMismatch(f"phi slot carries {e1!r}, a pole at a key point")
            b = pairing(e0, e1, pts)
            if not b:
                continue
            key = rest0 + kf[:phi_slot] + kf[phi_slot + 1:]
            v = out.get(key, ZERO) + cp * cf * b
            if v:
                out[key] = v
            else:
                out.pop(key, None)
    return out


def ordered(tensor: Tensor) -> Dict[tuple, object]:
    """Expand a symmetric tensor into all ordered arrangements."""
    from itertools import permutations

    out = {}
    for key, c in tensor.data.items():
        for perm in set(permutations(key)):
            out[perm] = c
    return out


__all__ = [
    "KeyPoint", "SpectralCurveSpec", "BergmanKernel", "FormBasis", "validate_curve",
    "bergman_integral", "basis_pairing", "pairing", "star_pairing", "ordered",
    "airy_curve", "cubic_curve",
]
