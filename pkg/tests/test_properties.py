from __future__ import annotations

from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from blobtr.convolution import convolve
from blobtr.curve import BergmanKernel
from blobtr.kp import (classify_series, connected_det, coordinate_kernel, determinant, determinantal_check,
                       hirota_check, krichever_blob, set_partitions, tau_from_omegas, theta_ring)
from blobtr.rational import ONE, q_str, to_q
from blobtr.series import Series
from blobtr.tensors import System, Tensor, hol, pole

small = st.builds(lambda a, b: to_q(Fraction(a, b)), st.integers(-6, 6), st.integers(1, 4))


@given(st.integers(1, 4).flatmap(lambda n: st.lists(st.lists(st.integers(-5, 5), min_size=n, max_size=n),
                                                     min_size=n, max_size=n)))
def test_determinant_is_sum_of_connected_blocks(A):
    n = len(A)
    total = 0
    for part in set_partitions(range(n)):
        term = 1
        for block in part:
            term *= connected_det([[A[i][j] for j in block] for i in block])
        total += term
    assert total == determinant(A, 0)


@given(st.dictionaries(st.integers(3, 6), st.dictionaries(st.integers(0, 1), small.filter(bool), min_size=1,
                                                          max_size=2), max_size=3))
def test_coordinate_fit_round_trip(coeffs):
    target = coordinate_kernel(coeffs, 8, 1)
    rep = classify_series(target, 8, 1)
    assert rep["kp_trivial"]
    assert rep["coordinate"] == {k: {d: q_str(c) for d, c in v.items()} for k, v in coeffs.items() if v}


@settings(max_examples=10)
@given(st.lists(small, min_size=3, max_size=3), st.sampled_from([0, 1, 2]))
def test_exponential_theta_blobs_are_kp(a, z0):
    r = theta_ring(3, 6)
    lin = Series(r)
    for k, c in enumerate(a, 1):
        lin = lin + Series.var(r, f"w{k}", 1, c)
    kb = krichever_blob(lin.exp(), [{hol(1): ONE}, {hol(2): ONE}, {hol(1): ONE, hol(3): ONE}])
    assert determinantal_check(kb.system, z0, 3, 5, 0)["status"] == "pass"
    assert hirota_check(tau_from_omegas(kb.system, z0, 5, 0), 4)["status"] == "pass"


@settings(max_examples=12)
@given(small, small, small, st.sampled_from([0, 1]))
def test_determinantal_identities_imply_hirota(b11, b12, b22, z0):
    # a nonzero perturbation of degree <= 1 in each variable is never a coordinate change
    B = BergmanKernel.from_dict({(1, 1): b11, (1, 2): b12, (2, 1): b12, (2, 2): b22})
    S = System({(0, 2): B.as_entry()})
    det = determinantal_check(S, z0, 3, 6, 0)["status"]
    hir = hirota_check(tau_from_omegas(S, z0, 6, 0), 5)["status"]
    if det == "pass":
        assert hir == "pass"
    assert det == ("pass" if B.is_standard() else "fail")


pole_tensors = st.dictionaries(st.tuples(st.integers(2, 3), st.integers(2, 3)).map(lambda t: tuple(sorted(t))),
                               small.filter(bool), max_size=2)
hol_tensors = st.dictionaries(st.tuples(st.integers(1, 2), st.integers(1, 2)).map(lambda t: tuple(sorted(t))),
                              small.filter(bool), max_size=2)


@settings(max_examples=10)
@given(st.lists(small, min_size=2, max_size=2), pole_tensors, st.lists(small, min_size=2, max_size=2),
       hol_tensors)
def test_convolution_methods_agree(p1, p2, f1, f2):
    psi = System({(1, 1): Tensor(1, {(pole(0, k + 2),): c for k, c in enumerate(p1) if c}),
                  (1, 2): Tensor(2, {(pole(0, a), pole(0, b)): c for (a, b), c in p2.items()})})
    phi = System({(0, 1): Tensor(1, {(hol(k + 1),): c for k, c in enumerate(f1) if c}),
                  (0, 2): Tensor(2, {(hol(a), hol(b)): c for (a, b), c in f2.items()})})
    outs = [convolve(psi, phi, [0], 2, 2, m) for m in ("moyal", "graphs", "recursion")]
    assert outs[0] == outs[1] == outs[2]
