from __future__ import annotations

import math

import pytest

from blobtr.curve import BergmanKernel, airy_curve
from blobtr.errors import (CoincidentDivisorPoints, CoincidentPoints, IrregularBasepoint, NonzeroResidue,
                           ThetaVanishesAtOrigin, TruncationInsufficient, UngradedInput)
from blobtr.gentr import gentr_system
from blobtr.kp import (GlobalEvaluator, TauTruncation, connected_det, determinant, determinantal_check,
                       divisor_kernel, divisor_residues, global_determinantal_check, hirota_check,
                       hirota_omega_residue, kernel_from_omegas, kp_symmetry_check, krichever_blob, label_primitive,
                       label_taylor, label_value, nkp_hirota_check, partitions_upto, schur_polynomials, schur_tau,
                       set_partitions, tau_from_omegas, tau_ring, theta_ring, trivial_classify)
from blobtr.rational import ONE, to_q
from blobtr.series import Series
from blobtr.tensors import System, Tensor, hol, pole

STD = BergmanKernel.standard()


@pytest.fixture(scope="module")
def airy():
    return gentr_system(airy_curve(), None, 3, 5)


def trivial():
    return System({(0, 2): STD.as_entry()})


def with_linear_term(c):
    return System({(0, 2): STD.as_entry(), (0, 1): Tensor(1, {(hol(1),): to_q(c)})})


# combinatorics

def test_connected_det_examples():
    A = [[1, 2, 3], [4, 5, 6], [7, 8, 9]]
    assert connected_det([[7]]) == 7
    assert connected_det([[1, 2], [3, 4]]) == -6
    # 3-cycles (0 1 2) and (0 2 1)
    assert connected_det(A) == 2 * 6 * 7 + 3 * 8 * 4


def test_determinant_examples():
    assert determinant([[to_q(2), to_q(1)], [to_q(1), to_q(3)]]) == 5
    assert determinant([[0, 1, 0], [0, 0, 1], [1, 0, 0]]) == 1
    assert determinant([]) == 1


def test_set_partitions_are_counted_by_bell_numbers():
    assert [sum(1 for _ in set_partitions(range(n))) for n in range(6)] == [1, 1, 2, 5, 15, 52]


def test_label_calculus():
    assert label_value(pole(1, 2), to_q(3)) == to_q("1/4")
    assert label_primitive(hol(3), to_q(3)) == 9
    assert label_primitive(pole(1, 3), to_q(3)) == to_q("-1/8")
    with pytest.raises(NonzeroResidue):
        label_primitive(pole(1, 1), to_q(3))
    assert label_taylor(hol(3), 1, 3) == [1, 2, 1, 0]
    with pytest.raises(IrregularBasepoint):
        label_taylor(pole(0, 2), 0, 2)


# local kernels and tau functions

def test_kernel_of_linear_term_is_exponential():
    K = kernel_from_omegas(with_linear_term(3), 0, 5, 0)
    for i in range(4):
        for j in range(4 - i):
            assert K.value(i, j) == to_q(3) ** (i + j) * (-1) ** j / (math.factorial(i) * math.factorial(j))


def test_kernel_of_trivial_system_is_one():
    K = kernel_from_omegas(trivial(), 2, 6, 0)
    assert K.R == Series.const(K.ring, ONE)


def test_tau_of_linear_term():
    tau = tau_from_omegas(with_linear_term(3), 0, 4, 0)
    assert tau.coefficient({"t1": 2}) == to_q("9/2")
    assert tau.coefficient({"t2": 1}) == 0
    assert hirota_check(tau, 3)["status"] == "pass"


def test_schur_examples():
    s = schur_polynomials(3)
    r = s[(1,)].ring
    t1, t3 = Series.var(r, "t1"), Series.var(r, "t3")
    assert s[(1,)] == t1
    assert s[(2, 1)] == (t1 * t1 * t1).scale(to_q("1/3")) - t3
    assert len(partitions_upto(4)) == 1 + 1 + 2 + 3 + 5


def test_schur_polynomials_are_tau_functions():
    s = schur_polynomials(5)
    assert hirota_check(TauTruncation(s[(2, 1)], 5, 0), 4)["status"] == "pass"
    assert hirota_check(TauTruncation(s[(2, 2)] + s[(2, 1)].scale(to_q(3)), 5, 0), 4)["status"] == "pass"
    # violates the Pluecker relation c_0 c_22 - c_1 c_21 + c_2 c_11 = 0
    assert hirota_check(TauTruncation(s[()] + s[(2, 2)], 5, 0), 4)["status"] == "fail"


def test_schur_expansion_matches_tau(airy):
    tau = tau_from_omegas(airy, 1, 5, 2)
    K = kernel_from_omegas(airy, 1, 9, 2)
    assert schur_tau(K, 5).series == tau.series


def test_hirota_negative_control_is_located():
    r = tau_ring(4, 0)
    rep = hirota_check(TauTruncation(Series.const(r, 1) + Series.var(r, "t2"), 4, 0), 3)
    assert rep["status"] == "fail"
    assert rep["first_failure"]["monomial"] == {"u3": 1} and rep["first_failure"]["residue"] == "1/4"


def test_hirota_needs_enough_degree():
    with pytest.raises(TruncationInsufficient):
        hirota_check(tau_from_omegas(trivial(), 0, 3, 0), 3)


def test_arity_truncated_system_is_rejected():
    short = gentr_system(airy_curve(), None, 2, 3)
    with pytest.raises(TruncationInsufficient):
        determinantal_check(short, 1, 3, 4, 2)
    with pytest.raises(TruncationInsufficient):
        tau_from_omegas(short, 1, 4, 2)
    assert determinantal_check(gentr_system(airy_curve(), None, 2, 4), 1, 3, 4, 2)["status"] == "pass"


def test_airy_is_kp_integrable(airy):
    assert determinantal_check(airy, 1, 4, 5, 3)["status"] == "pass"
    assert hirota_check(tau_from_omegas(airy, 1, 5, 3), 4)["status"] == "pass"


def test_perturbed_system_fails_determinantal(airy):
    bad = airy.copy()
    t = bad[(1, 3)]
    key = sorted(t.data)[0]
    bad[(1, 3)] = Tensor(3, {key: t[key] + 1})
    rep = determinantal_check(bad, 1, 3, 5, 3)
    assert rep["status"] == "fail" and rep["first_failure"]["n"] == 3
    assert global_determinantal_check(bad, [2, 3, 5], 3)["status"] == "fail"


def test_base_point_must_be_regular(airy):
    with pytest.raises(IrregularBasepoint):
        determinantal_check(airy, 0, 2, 4, 3)


# trivial systems

def test_standard_kernel_is_trivial():
    rep = trivial_classify(STD.as_entry(), 0, 8)
    assert rep["kp_trivial"] and rep["coordinate"] == {}


def test_generic_perturbation_is_not_trivial():
    B = BergmanKernel.from_dict({(1, 1): 1, (2, 2): 3, (1, 2): 2, (2, 1): 2})
    rep = trivial_classify(B.as_entry(), 0, 8)
    assert not rep["kp_trivial"] and "first_failure" in rep
    fail = determinantal_check(System({(0, 2): B.as_entry()}), 0, 2, 6, 0)
    assert fail["status"] == "fail"
    assert fail["first_failure"]["n"] == 2


def test_constant_perturbation_is_not_trivial():
    rep = trivial_classify(BergmanKernel.from_dict({(1, 1): 1}).as_entry(), 0, 8)
    assert not rep["kp_trivial"]
    assert rep["first_failure"]["monomial"] == {"x1": 1, "x2": 1}


# theta-function blobs

def test_exponential_theta_gives_linear_blob():
    r = theta_ring(1, 4)
    kb = krichever_blob(Series.var(r, "w1", 1, to_q(3)).exp(), [{hol(1): ONE}])
    assert kb.system[(0, 1)] == Tensor(1, {(hol(1),): to_q(3)})
    assert (0, 3) not in kb.system or kb.system[(0, 3)].is_zero()
    assert kb.tau(0, 4).coefficient({"t1": 2}) == to_q("9/2")


def test_constant_theta_gives_kernel_only():
    r = theta_ring(2, 3)
    B = BergmanKernel.from_dict({(1, 1): 2})
    kb = krichever_blob(Series.const(r, 5), [{hol(1): ONE}, {hol(2): ONE}], B)
    assert kb.system == System({(0, 2): B.as_entry()})


def test_theta_tau_matches_tau_from_blobs():
    r = theta_ring(2, 7)
    theta = (Series.const(r, 1) + Series.var(r, "w1", 1, to_q(2))) * Series.var(r, "w2", 1, to_q("1/3")).exp()
    kb = krichever_blob(theta, [{hol(1): ONE}, {hol(2): ONE, hol(1): to_q(-1)}], BergmanKernel.from_dict({(1, 1): 1}))
    assert kb.tau(1, 7).series == tau_from_omegas(kb.system, 1, 7, 0).series


def test_theta_must_not_vanish():
    r = theta_ring(1, 3)
    with pytest.raises(ThetaVanishesAtOrigin):
        krichever_blob(Series.var(r, "w1"), [{hol(1): ONE}])


# global mode

def test_global_mode_rejects_hbar_zero_blobs():
    r = theta_ring(1, 4)
    kb = krichever_blob((Series.var(r, "w1") * Series.var(r, "w1")).exp(), [{hol(1): ONE}])
    with pytest.raises(UngradedInput):
        GlobalEvaluator(kb.system, 2)


def test_global_determinantal_identities(airy):
    assert global_determinantal_check(airy, [2, 3, 5], 3)["status"] == "pass"
    with pytest.raises(CoincidentPoints):
        global_determinantal_check(airy, [2, 2], 3)
    with pytest.raises(IrregularBasepoint):
        global_determinantal_check(airy, [0, 2], 3)


@pytest.mark.parametrize("system", ["trivial", "airy"])
def test_kp_symmetry(system, airy):
    S = airy if system == "airy" else trivial()
    for pts in ([5], [5, 7]):
        assert kp_symmetry_check(S, 2, 3, pts, 3)["status"] == "pass"


def test_residue_lemma(airy):
    assert hirota_omega_residue(airy, 1, 2, [2, 3, 5, 7], 2)["status"] == "pass"
    with pytest.raises(ValueError):
        hirota_omega_residue(airy, 1, 2, [2, 3], 2)


def test_divisor_kernel_residues(airy):
    dk = divisor_kernel(airy, [2], [3], 2)
    res = divisor_residues(dk, 1, [])
    assert res[2] == {0: 1} and res[3] == {0: -1}
    assert all(not v for v in divisor_residues(dk, 2, [5]).values())
    with pytest.raises(CoincidentDivisorPoints):
        divisor_kernel(airy, [2], [2], 2)


@pytest.mark.parametrize("system", ["trivial", "airy"])
def test_multi_kp(system, airy):
    S = airy if system == "airy" else trivial()
    assert nkp_hirota_check(S, [2, 5], [1, 0], [0, -1], [1, 0], [0, 1], 2)["status"] == "pass"


def test_multi_kp_validates_divisor_degrees(airy):
    with pytest.raises(ValueError):
        nkp_hirota_check(airy, [2, 5], [1, 1], [0, -1], [1, 0], [0, 1], 2)
