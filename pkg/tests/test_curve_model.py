from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from blobtr.curve import (BergmanKernel, FormBasis, KeyPoint, SpectralCurveSpec, airy_curve, basis_pairing,
                          bergman_integral, cubic_curve, pairing, star_pairing, validate_curve)
from blobtr.errors import BasisMismatch, DuplicateKeyPoint, ZeroLeadingCoefficient
from blobtr.jets import INF, primitive
from blobtr.rational import ONE, to_q
from blobtr.tensors import Tensor, hol, label_jet, pole


def test_airy_point_is_special():
    rep = validate_curve(airy_curve())
    assert rep["special"] == [0] and rep["remove"] == []
    assert rep["points"][0]["r"] == 2 and rep["points"][0]["s"] == 1


def test_regular_point_can_be_removed():
    spec = SpectralCurveSpec.from_functions([0, 0, 1], [0, 1], [0, 2])
    rep = validate_curve(spec)
    assert rep["special"] == [0] and rep["remove"] == [2]


def test_cubic_curve_has_two_simple_branch_points():
    rep = validate_curve(cubic_curve())
    assert rep["special"] == [-1, 1]
    assert all(p["r"] == 2 and p["s"] == 1 for p in rep["points"])


def test_duplicate_key_point_rejected():
    kp = KeyPoint.from_coefficients(0, 1, [2], 0, [1])
    with pytest.raises(DuplicateKeyPoint):
        validate_curve(SpectralCurveSpec((kp, kp)))


def test_zero_leading_coefficient_rejected():
    with pytest.raises(ZeroLeadingCoefficient):
        KeyPoint.from_coefficients(0, 1, [0, 1], 0, [1])


def test_local_only_key_point():
    kp = KeyPoint.from_coefficients("1/2", 2, [3, 1], 0, [1], prec=6)
    assert (kp.r, kp.s, kp.special) == (3, 1, True)


def test_bergman_integral_standard():
    # int_q^z dz'/(z'-p)^2 = 1/(z-p) - 1/(q-p); coefficient of zeta^j is dz/(z-q)^(j+1)
    jet = bergman_integral(BergmanKernel.standard(), 0, 3)
    assert not jet.coefficient(0)
    assert jet.coefficient(1) == Tensor(1, {(pole(0, 2),): ONE})
    assert jet.coefficient(3) == Tensor(1, {(pole(0, 4),): ONE})


def test_bergman_integral_with_perturbation():
    B = BergmanKernel.from_dict({(2, 2): 1})
    jet = bergman_integral(B, 1, 2)
    # int_1^z t dt = zeta + zeta^2/2 at q = 1
    assert jet.coefficient(1)[(hol(2),)] == 1
    assert jet.coefficient(2)[(hol(2),)] == to_q("1/2")


def test_basis_pairing_examples():
    assert basis_pairing(0, 2, 1) == 1
    assert basis_pairing(1, 2, 2) == 1
    assert basis_pairing(1, 3, 2) == to_q("1/2")
    assert basis_pairing(0, 3, 1) == 0
    assert basis_pairing(5, 1, 3) == 0


@given(st.integers(-4, 4), st.integers(2, 5), st.integers(1, 6))
def test_basis_pairing_matches_jets(q, k, l):
    # res dz/(z-q)^k * int_q^z t^(l-1) dt via jet primitives
    prim = primitive(label_jet(hol(l), q, k + 2), anchored=True)
    assert basis_pairing(q, k, l) == prim.coefficient(k - 1)


def test_pairing_pole_against_pole_elsewhere():
    # int_0^z dt/(t-2)^2 = 1/(2-z) - 1/2 = z/4 + ...
    assert pairing(pole(0, 2), pole(2, 2), (0,)) == to_q("1/4")
    with pytest.raises(BasisMismatch):
        pairing(pole(0, 2), pole(0, 3), (0,))


def test_star_pairing_contracts_one_slot():
    psi = {(pole(0, 2), hol(1)): ONE}
    phi = {(hol(1), hol(3)): to_q(2)}
    assert star_pairing(psi, phi, [0]) == {(hol(1), hol(3)): to_q(2)}
    with pytest.raises(BasisMismatch):
        star_pairing(psi, {(pole(0, 2),): ONE}, [0])


def test_kernel_symmetry_enforced():
    with pytest.raises(ValueError):
        BergmanKernel.from_dict({(1, 2): 1})
    B = BergmanKernel.from_dict({(1, 2): 1, (2, 1): 1})
    assert B.plus(B.scaled(-1)).is_standard()


def test_form_basis_caps():
    basis = FormBasis((to_q(0),), 3, 2)
    basis.check(Tensor(2, {(hol(2), pole(0, 3)): ONE}))
    with pytest.raises(BasisMismatch):
        basis.check(Tensor(1, {(hol(3),): ONE}))
    assert len(basis.labels()) == 5


def test_label_jet_of_far_pole():
    jet = label_jet(pole(2, 1), 0, 3)
    assert [jet.coefficient(i) for i in range(3)] == [to_q("-1/2"), to_q("-1/4"), to_q("-1/8")]
    assert label_jet(hol(3), 1, INF).terms() == {0: ONE, 1: to_q(2), 2: ONE}
