from __future__ import annotations

import math
import networkx as nx
import pytest
from networkx.algorithms.isomorphism import GraphMatcher

from blobtr.convolution import (PHI, PSI, Potential, b_independence_check, blobbed_tr, convolve, duality_check,
                                enumerate_graphs, tilde_form, trivial_blobs, with_kernel)
from blobtr.curve import BergmanKernel, airy_curve, cubic_curve
from blobtr.errors import BasisMismatch, OverlappingPoleSets
from blobtr.gentr import gentr_system
from blobtr.rational import to_q
from blobtr.tensors import System, Tensor, hol, pole

METHODS = ("moyal", "graphs", "recursion")


def brute_aut(graph) -> int:
    """Automorphisms fixing leaves and vertex types, by networkx isomorphism count."""
    G = nx.Graph()
    for i, (arity, leaves) in enumerate(graph.psi):
        G.add_node(("a", i), kind=("psi", arity, leaves))
    for j, (arity, col, leaves) in enumerate(graph.phi):
        G.add_node(("b", j), kind=("phi", arity, leaves))
        for i, c in enumerate(col):
            if c:
                G.add_edge(("a", i), ("b", j), mult=c)
    gm = GraphMatcher(G, G, node_match=lambda x, y: x["kind"] == y["kind"],
                      edge_match=lambda x, y: x["mult"] == y["mult"])
    count = sum(1 for _ in gm.isomorphisms_iter())
    for _, _, m in G.edges(data="mult"):
        count *= math.factorial(m)
    return count


@pytest.mark.parametrize("n", [1, 2])
def test_graph_automorphisms_match_brute_force(n):
    graphs = enumerate_graphs(n, 3, {1: 1, 2: 1, 3: 1}, {1: 0, 2: 0, 3: 0})
    assert graphs
    for g in graphs[:400]:
        assert g.aut == brute_aut(g), g


def test_double_edge_has_two_automorphisms():
    graphs = enumerate_graphs(1, 2, {2: 1}, {3: 0})
    doubles = [g for g in graphs if len(g.psi) == 1 and len(g.phi) == 1 and g.phi[0][1] == (2,)]
    assert doubles and all(g.aut == 2 for g in doubles)


def test_graphs_are_canonical_and_distinct():
    graphs = enumerate_graphs(2, 3, {1: 1, 2: 1}, {1: 0, 2: 0, 3: 0})
    assert len(set(graphs)) == len(graphs)


def test_holomorphic_leaf_mode():
    graphs = enumerate_graphs(2, 2, {1: 1, 2: 1}, {1: 0, 2: 0, 3: 0}, mode="G'")
    assert graphs
    assert all(all(not lv for _, lv in g.psi) for g in graphs)


@pytest.mark.parametrize("method", METHODS)
def test_convolution_examples(method):
    psi = System({(1, 1): Tensor(1, {(pole(0, 2),): to_q(3)})})
    phi = System({(0, 2): Tensor(2, {(hol(1), hol(1)): to_q(5)})})
    out = convolve(psi, phi, [0], 2, 2, method)
    assert out[(1, 1)] == Tensor(1, {(hol(1),): to_q(15), (pole(0, 2),): to_q(3)})
    assert out[(0, 2)] == phi[(0, 2)]
    psi = System({(1, 2): Tensor(2, {(pole(0, 2), pole(0, 2)): to_q(1)})})
    phi = System({(0, 1): Tensor(1, {(hol(1),): to_q(1)})})
    out = convolve(psi, phi, [0], 2, 2, method)
    assert out[(1, 1)] == Tensor(1, {(pole(0, 2),): to_q(1)})


@pytest.mark.parametrize("method", METHODS)
def test_empty_side_is_neutral(method):
    psi = tilde_form(gentr_system(airy_curve(), None, 2, 4), BergmanKernel.standard())
    out = convolve(psi, System(), [0], 2, 3, method)
    assert out.first_difference(psi.restrict(2, 3)) is None


def test_methods_agree_on_blobbed_airy():
    blobs = trivial_blobs().copy()
    blobs[(0, 2)] = blobs[(0, 2)] + Tensor(2, {(hol(1), hol(2)): to_q("1/3")})
    blobs[(1, 1)] = Tensor(1, {(hol(1),): to_q(2)})
    blobs[(0, 3)] = Tensor(3, {(hol(1), hol(1), hol(1)): to_q(5)})
    runs = [blobbed_tr(airy_curve(), blobs, None, 3, 3, m) for m in METHODS]
    assert runs[0].first_difference(runs[1]) is None
    assert runs[0].first_difference(runs[2]) is None


def test_trivial_blobs_reproduce_recursion():
    tr = gentr_system(airy_curve(), None, 3, 4)
    out = blobbed_tr(airy_curve(), trivial_blobs(), None, 3, 3)
    assert out.first_difference(tr.restrict(3, 3)) is None


def test_b_independence_examples():
    blobs = trivial_blobs().copy()
    blobs[(1, 1)] = Tensor(1, {(hol(2),): to_q(1)})
    B1 = BergmanKernel.standard()
    B2 = BergmanKernel.from_dict({(1, 1): 1})
    assert b_independence_check(airy_curve(), blobs, B1, B2, 2, 3)["status"] == "pass"


def test_duality():
    B = BergmanKernel.standard()
    a = tilde_form(gentr_system(cubic_curve().restrict_to([-1]), None, 2, 4), B)
    b = tilde_form(gentr_system(cubic_curve().restrict_to([1]), None, 2, 4), B)
    assert duality_check(a, [-1], b, [1], 2, 3)["status"] == "pass"
    with pytest.raises(OverlappingPoleSets):
        duality_check(a, [-1], b, [-1], 2, 3)


def test_pole_at_key_point_on_holomorphic_side_rejected():
    psi = System({(1, 1): Tensor(1, {(pole(0, 2),): to_q(1)})})
    phi = System({(0, 1): Tensor(1, {(pole(0, 2),): to_q(1)})})
    with pytest.raises(BasisMismatch):
        convolve(psi, phi, [0], 1, 1)


def test_kernel_round_trip():
    B = BergmanKernel.from_dict({(2, 2): 3})
    S = gentr_system(airy_curve(), B, 1, 3)
    assert with_kernel(tilde_form(S, B), B) == S


def test_potential_round_trip():
    S = System({(1, 2): Tensor(2, {(pole(0, 2), pole(0, 2)): to_q(4), (hol(1), pole(0, 2)): to_q(1)})})
    P = Potential.from_system(S, PSI)
    assert P.to_system() == S
    # a tensor coefficient c on a key with multiplicities becomes c / prod(mult!)
    mono = ((PSI, pole(0, 2)), (PSI, pole(0, 2)))
    assert P.terms[(1, mono)] == 2
    assert {v[0] for v in P.variables()} == {PSI}
    assert not Potential.from_system(S, PHI).variables() & P.variables()
