from __future__ import annotations

import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from blobtr.curve import BergmanKernel, SpectralCurveSpec, airy_curve, cubic_curve
from blobtr.errors import DegenerateCurve, NonzeroResidueAtKeyPoint
from blobtr.gentr import GenTREngine, ceo_oracle, gentr_solve, gentr_system, loop_operator_apply, projection_apply
from blobtr.rational import ONE, to_q
from blobtr.tensors import System, Tensor, hol, pole

from sympy_oracle import airy_ceo, tensor_expr

ZS = sympy.symbols("z1:5")


@pytest.fixture(scope="module")
def airy():
    return gentr_system(airy_curve(), None, 3, 5)


@pytest.mark.parametrize("g,n", [(0, 3), (1, 1)])
def test_airy_against_sympy_residues(g, n):
    got = tensor_expr(gentr_solve(airy_curve(), None, g, n), ZS[:n])
    assert sympy.simplify(got - airy_ceo(g, n, ZS[:n])) == 0


def test_airy_frozen_values(airy):
    p2, p4 = pole(0, 2), pole(0, 4)
    assert airy[(1, 3)] == Tensor(3, {(p2, p2, p2): to_q("-1/2")})
    assert airy[(1, 1)] == Tensor(1, {(p4,): to_q("-1/16")})
    assert airy[(2, 4)] == Tensor(4, {(p2, p2, p2, p4): to_q("3/4")})


def test_unstable_and_kernel_entries():
    B = BergmanKernel.from_dict({(1, 1): 2})
    assert gentr_solve(airy_curve(), B, 0, 2) == B.as_entry()
    assert gentr_solve(airy_curve(), B, 0, 2).diag
    assert gentr_solve(airy_curve(), None, 0, 1).is_zero()


@pytest.mark.parametrize("curve", [airy_curve, cubic_curve])
@pytest.mark.parametrize("g,n", [(0, 3), (1, 1), (0, 4), (1, 2)])
def test_gentr_equals_residue_formula(curve, g, n):
    assert gentr_solve(curve(), None, g, n) == ceo_oracle(curve(), None, g, n)


def test_gentr_equals_residue_formula_with_perturbed_kernel():
    B = BergmanKernel.from_dict({(1, 2): to_q("1/2"), (2, 1): to_q("1/2"), (2, 2): to_q(-1)})
    eng = GenTREngine(cubic_curve(), B)
    for g, n in [(0, 3), (1, 1), (0, 4)]:
        assert eng.compute(g, n) == ceo_oracle(cubic_curve(), B, g, n)


def test_residue_formula_needs_simple_branch_points():
    spec = SpectralCurveSpec.from_functions([0, 0, 0, 1], [0, 1], [0])
    with pytest.raises(DegenerateCurve):
        ceo_oracle(spec, None, 0, 3)


def test_higher_order_branch_point_solves():
    # x = z^3, y = z: r = 3, outside the residue formula's reach
    spec = SpectralCurveSpec.from_functions([0, 0, 0, 1], [0, 1], [0])
    w = gentr_solve(spec, None, 0, 3)
    assert w and all(e[0] == "p" and e[1] == 0 for key in w.keys() for e in key)


@pytest.mark.parametrize("D,n,K", [(1, 0, ()), (2, 1, (pole(0, 2),)), (3, 2, (pole(0, 2), pole(0, 4)))])
def test_loop_equations_hold(airy, D, n, K):
    jet = loop_operator_apply(airy, airy_curve(), 0, n, D, K)
    assert all(not jet.coefficient(i) for i in range(jet.val, 0))


def test_loop_equations_detect_perturbation(airy):
    bad = airy.copy()
    bad[(1, 1)] = Tensor(1, {(pole(0, 4),): to_q("-1/8")})
    jet = loop_operator_apply(bad, airy_curve(), 0, 1, 2, (pole(0, 2),))
    assert any(jet.coefficient(i) for i in range(jet.val, 0))


def test_outputs_are_symmetric_and_pole_only(airy):
    for (d, n), t in airy.items():
        if d == 0:
            continue
        for key in t.keys():
            assert list(key) == sorted(key)
            assert all(e[0] == "p" and e[2] >= 2 for e in key)


def test_projection_examples():
    t = Tensor(1, {(pole(0, 3),): ONE})
    assert projection_apply(t, BergmanKernel.standard()) == t
    B = BergmanKernel.from_dict({(1, 1): 1})
    got = projection_apply(Tensor(2, {(pole(0, 2), pole(0, 2)): ONE}), B)
    assert got == Tensor(2, {(hol(1), hol(1)): ONE, (hol(1), pole(0, 2)): ONE, (pole(0, 2), pole(0, 2)): ONE})
    with pytest.raises(NonzeroResidueAtKeyPoint):
        projection_apply(Tensor(1, {(pole(0, 1),): ONE}), B)


@given(st.dictionaries(st.tuples(st.integers(2, 4), st.integers(2, 4)), st.integers(-3, 3), max_size=3))
def test_projection_is_idempotent_on_principal_parts(coeffs):
    principal = Tensor(2, {tuple(sorted((pole(0, a), pole(0, b)))): to_q(c) for (a, b), c in coeffs.items()})
    B = BergmanKernel.from_dict({(1, 1): 1, (1, 2): 2, (2, 1): 2})
    once = projection_apply(principal, B)
    assert projection_apply(once, B) == once


def test_system_caps():
    S = gentr_system(airy_curve(), None, 2, 3)
    assert set(S.keys()) <= {(0, 2), (1, 1), (1, 3), (2, 2)}
    assert isinstance(S, System)
