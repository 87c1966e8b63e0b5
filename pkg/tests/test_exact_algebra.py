from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from blobtr.errors import (DivisionByZeroJet, IrreducibleFactor, KindMismatch, NonzeroAnchor, NonzeroResidue,
                           SingularLinearSystem, TruncationInsufficient)
from blobtr.jets import FUNCTION, INF, ONE_FORM, LaurentJet, flow_substitute, jet_arithmetic, primitive, residue
from blobtr.linalg import solve
from blobtr.ratfunc import RationalFunction, partial_fractions, rational_roots, reassemble
from blobtr.rational import ONE, ZERO, Dual, eps_part, q_str, real_part, to_q
from blobtr.series import Ring, Series

rationals = st.builds(lambda a, b: to_q(Fraction(a, b)), st.integers(-20, 20), st.integers(1, 12))
nonzero = rationals.filter(bool)


def jet(d, prec=INF, weight=FUNCTION):
    return LaurentJet.from_dict({e: to_q(c) for e, c in d.items()}, prec, weight)


# scalars

def test_to_q_accepts_exact_inputs():
    assert to_q("3/2") == Fraction(3, 2)
    assert to_q(Fraction(-1, 4)) == to_q("-1/4")
    assert q_str(to_q("6/3")) == "2"
    with pytest.raises(TypeError):
        to_q(0.5)
    with pytest.raises(ValueError):
        to_q("one half")


def test_dual_numbers_square_to_zero():
    e = Dual(0, 1)
    assert e * e == 0
    x = Dual(2, 3)
    assert x * x.inverse() == 1
    assert real_part(x) == 2 and eps_part(x) == 3
    with pytest.raises(ZeroDivisionError):
        e.inverse()


# jets

def test_jet_product_and_quotient_examples():
    a = jet({-1: 1, 0: 1})
    assert a * jet({1: 1}) == jet({0: 1, 1: 1})
    form = jet({-2: 1}, weight=ONE_FORM)
    q = jet_arithmetic(form, jet({0: 1}, weight=ONE_FORM), "div")
    assert q.weight == FUNCTION and q.terms() == {-2: 1}


def test_jet_with_series_coefficients_truncates_hbar():
    ring = Ring.make(["hbar"], caps={"hbar": 1})
    h = Series.var(ring, "hbar")
    one = Series.const(ring, 1)
    a = LaurentJet(0, [one, h])
    b = LaurentJet(0, [one, -h])
    prod = a * b
    assert prod.coefficient(0) == one and not prod.coefficient(1) and not prod.coefficient(2)


def test_residue_examples():
    assert residue(jet({-1: 1}, weight=ONE_FORM)) == 1
    assert residue(jet({-3: 1}, weight=ONE_FORM)) == 0
    with pytest.raises(KindMismatch):
        residue(jet({-1: 1}))


def test_primitive_examples():
    assert primitive(jet({1: 1}, weight=ONE_FORM)) == jet({2: "1/2"})
    with pytest.raises(NonzeroAnchor):
        primitive(jet({-2: 1}, weight=ONE_FORM))
    assert primitive(jet({-2: 1}, weight=ONE_FORM), anchored=False) == jet({-1: -1})
    with pytest.raises(NonzeroResidue):
        primitive(jet({-1: 1}, weight=ONE_FORM))


def test_division_errors():
    with pytest.raises(DivisionByZeroJet):
        jet({0: 1}) / jet({}, prec=4)
    with pytest.raises(TruncationInsufficient):
        jet({0: 1}) / jet({0: 1, 1: 1})
    assert (jet({0: 1}).divide(jet({0: 1, 1: 1}), 4)).coeffs == [1, -1, 1, -1]


def test_flow_translation_and_sqrt():
    z = jet({1: 1})
    flow = flow_substitute(z, z, 3)
    assert flow[0] == z and flow[1] == jet({0: 1}) and flow[2].is_zero()
    # x = z^2 around z0 = 1: zeta + 1 = sqrt(x), x = (1 + zeta)^2
    base = (ONE, "z")
    f = LaurentJet(0, [ONE, ONE], INF, FUNCTION, base)
    x = LaurentJet(0, [ONE, to_q(2), ONE], INF, FUNCTION, base)
    flow = flow_substitute(f, x, 4, prec=8)
    # value at zeta = 0 of the t^k coefficient is binom(1/2, k)
    binom = [ONE, to_q("1/2"), to_q("-1/8"), to_q("1/16"), to_q("-5/128")]
    assert [flow[k].coefficient(0) for k in range(5)] == binom


def test_flow_of_x_is_translation():
    base = (to_q(2), "z")
    x = LaurentJet(0, [to_q(4), to_q(4), ONE], INF, FUNCTION, base)
    flow = flow_substitute(x, x, 3, prec=10)
    assert flow[1].agrees_with(LaurentJet.constant(ONE, 9, base=base))
    assert flow[2].is_zero() and flow[3].is_zero()


@given(st.lists(rationals, min_size=1, max_size=5), st.lists(rationals, min_size=1, max_size=5),
       st.integers(-3, 3), st.integers(-3, 3))
def test_jet_round_trips(ca, cb, va, vb):
    a = LaurentJet(va, ca, 8)
    b = LaurentJet(vb, cb, 8)
    assert ((a + b) - b).agrees_with(a)
    if b.coeffs:
        assert ((a * b).divide(b)).agrees_with(a)


@given(st.lists(rationals, min_size=1, max_size=6), st.integers(0, 3))
def test_residue_of_derivative_vanishes(cs, v):
    f = LaurentJet(v - 3, cs, INF)
    assert residue(f.derivative()) == 0


@given(st.lists(rationals, min_size=1, max_size=4), rationals, rationals)
def test_flow_is_a_group(cs, s, t):
    base = (to_q(1), "z")
    x = LaurentJet(0, [ONE, to_q(2), ONE], INF, FUNCTION, base)
    f = LaurentJet(0, cs, INF, FUNCTION, base)
    order, prec = 6, 12

    def flow(g, u):
        terms = flow_substitute(g, x, order, prec)
        acc = LaurentJet.zero(prec, base=base)
        for k, j in terms.items():
            acc = acc + j.scale(u ** k)
        return acc

    # compare as polynomials in s, t up to total degree `order`: use coefficient truncation
    lhs = flow(flow(f, s), t)
    rhs = flow(f, s + t)
    # the order-`order` truncation leaves discrepancies only at total degree > order,
    # so compare the t-linear structure exactly with s = 0 instead
    assert flow(flow(f, ZERO), t).agrees_with(flow(f, t))
    assert lhs.coefficient(0) - rhs.coefficient(0) == _tail(cs, s, t, order)


def _tail(cs, s, t, order):
    """Mismatch of the truncated flows at zeta = 0: f(sqrt(1 + u)) expanded in u."""
    from math import comb

    from blobtr.rational import to_q as q

    # f(zeta) = sum c_i zeta^i, zeta = sqrt(1+u) - 1; value as a power series in u
    def series_in_u(n):
        half = [ONE]
        for k in range(1, n + 1):
            half.append(half[-1] * (q("1/2") - (k - 1)) / k)
        zeta = [ZERO] + half[1:]
        out = [ZERO] * (n + 1)
        power = [ONE] + [ZERO] * n
        for c in cs:
            for k in range(n + 1):
                out[k] += c * power[k]
            power = [sum(power[i] * zeta[k - i] for i in range(k + 1)) for k in range(n + 1)]
        return out

    a = series_in_u(2 * order)
    lhs = ZERO
    for i in range(order + 1):
        for j in range(order + 1):
            lhs += a[i + j] * comb(i + j, i) * s ** i * t ** j
    rhs = sum(a[k] * (s + t) ** k for k in range(order + 1))
    return lhs - rhs


# rational functions

def test_partial_fraction_examples():
    poly, parts = partial_fractions(RationalFunction((1,), (-1, 0, 1)))
    assert poly == () or not any(poly)
    assert parts == [(to_q(-1), [to_q("-1/2")]), (to_q(1), [to_q("1/2")])]
    _, parts = partial_fractions(RationalFunction((1,), (0, 0, 1)))
    assert parts == [(ZERO, [ZERO, ONE])]
    poly, parts = partial_fractions(RationalFunction((1, 0, 1), (0, 1)))
    assert list(poly) == [ZERO, ONE] and parts == [(ZERO, [ONE])]


def test_partial_fractions_irreducible_factor():
    with pytest.raises(IrreducibleFactor):
        partial_fractions(RationalFunction((1,), (1, 0, 1)))


def test_rational_roots():
    # (2z - 1)(z + 3)
    assert rational_roots((to_q(-3), to_q(5), to_q(2))) == [to_q(-3), to_q("1/2")]


@given(st.lists(rationals, max_size=4), st.lists(st.tuples(st.integers(-3, 3), st.lists(rationals, min_size=1,
                                                                                         max_size=3)),
                                                  max_size=3, unique_by=lambda t: t[0]))
def test_partial_fractions_reassembly(polypart, poles):
    r = reassemble(tuple(polypart), [(to_q(q), cs) for q, cs in poles])
    p2, parts = partial_fractions(r)
    assert reassemble(p2, parts) == r


# linear algebra

def test_solve_exact_and_singular():
    A = [[to_q(2), to_q(1)], [to_q(1), to_q(3)]]
    assert solve(A, [to_q(3), to_q(4)]) == [ONE, ONE]
    with pytest.raises(SingularLinearSystem):
        solve([[ONE, ONE], [ONE, ONE]], [ONE, ZERO])


# series

@given(st.lists(rationals, min_size=1, max_size=4))
def test_series_exp_log_inverse(cs):
    ring = Ring.make(["x", "hbar"], caps={"x": 4, "hbar": 2})
    s = Series(ring, {(i + 1, i % 3): c for i, c in enumerate(cs)})
    assert s.exp().log() == s
    one_plus = s + 1
    assert one_plus * one_plus.inverse() == Series.const(ring, 1)
