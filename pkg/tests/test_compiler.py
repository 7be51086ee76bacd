import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polynet.circuit import NodeKind
from polynet.compiler import compile_polynet, polynet_eval
from polynet.polyode import (
    PolynomialSystem,
    eval_derivative,
    hidden_node_bound,
    lorenz63,
    random_system,
)


def brute_force_monomials(n_vars, lo, hi):
    """All exponent vectors with total degree in [lo, hi], by exhaustive search."""
    out = set()
    for exps in itertools.product(range(hi + 1), repeat=n_vars):
        if lo <= sum(exps) <= hi:
            out.add(exps)
    return out


def dense_system(n_vars, max_degree):
    terms = [
        (n, 1.0 + 0.1 * k + n, exps)
        for n in range(n_vars)
        for k, exps in enumerate(sorted(brute_force_monomials(n_vars, 0, max_degree)))
    ]
    return PolynomialSystem(n_vars, max_degree, terms)


def test_lorenz_has_two_product_nodes():
    net = compile_polynet(lorenz63())
    assert net.n_hidden == 2
    assert {m.exponents for m in net.hidden_nodes} == {(1, 1, 0), (1, 0, 1)}
    assert net.circuit.census()[NodeKind.PRODUCT] == 2


def test_lorenz_weights():
    net = compile_polynet(lorenz63(10.0, 28.0, 8 / 3))
    np.testing.assert_array_equal(
        net.linear_weights, [[-10.0, 10.0, 0.0], [28.0, -1.0, 0.0], [0.0, 0.0, -8 / 3]]
    )
    np.testing.assert_array_equal(net.output_biases, [0.0, 0.0, 0.0])
    assert net.hidden_weights == {(1, 1): -1.0, (2, 0): 1.0}


def test_constants_only_system():
    sys = PolynomialSystem(2, 2, [(0, 1.5, (0, 0)), (1, -2.0, (0, 0))])
    net = compile_polynet(sys)
    assert net.n_hidden == 0
    for x in ([0.0, 0.0], [3.0, -7.0]):
        np.testing.assert_array_equal(polynet_eval(net, x), [1.5, -2.0])


def test_dense_quadratic_in_three_vars():
    net = compile_polynet(dense_system(3, 2))
    expected = brute_force_monomials(3, 2, 2)
    assert len(expected) == 6
    assert {m.exponents for m in net.hidden_nodes} == expected


@pytest.mark.parametrize("n_vars, max_degree", [(1, 3), (2, 3), (3, 3), (4, 2)])
def test_dense_hits_the_bound(n_vars, max_degree):
    net = compile_polynet(dense_system(n_vars, max_degree))
    assert net.n_hidden == len(brute_force_monomials(n_vars, 2, max_degree))
    assert net.n_hidden == hidden_node_bound(n_vars, max_degree)


def test_shared_monomial_gets_one_node():
    sys = PolynomialSystem(2, 2, [(0, 2.0, (1, 1)), (1, -3.0, (1, 1))])
    net = compile_polynet(sys)
    assert net.n_hidden == 1
    assert net.hidden_weights == {(0, 0): 2.0, (1, 0): -3.0}
    np.testing.assert_array_equal(polynet_eval(net, [2.0, 5.0]), [20.0, -30.0])


def test_product_node_fan_in_equals_degree():
    sys = PolynomialSystem(2, 4, [(0, 1.0, (3, 1))])
    net = compile_polynet(sys)
    edges = [e for e in net.circuit.edges if e.dst == "h1"]
    assert [e.src for e in edges] == ["x1", "x1", "x1", "x2"]
    assert all(e.weight == 1.0 and not e.delayed for e in edges)


def test_compile_is_deterministic():
    sys = lorenz63()
    a, b = compile_polynet(sys), compile_polynet(sys)
    assert a.to_dot() == b.to_dot()
    assert a.hidden_nodes == b.hidden_nodes


def test_zero_input_returns_biases():
    rng = np.random.default_rng(11)
    sys = random_system(rng, 4, 3)
    net = compile_polynet(sys)
    np.testing.assert_array_equal(polynet_eval(net, np.zeros(4)), net.output_biases)


def test_no_dead_nodes():
    rng = np.random.default_rng(5)
    for _ in range(20):
        net = compile_polynet(random_system(rng, 3, 3))
        used = {e.src for e in net.circuit.edges}
        for nid in net.circuit.node_ids:
            if net.circuit.kind(nid) is NodeKind.PRODUCT:
                assert nid in used


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 4), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_exact_agreement_with_direct_evaluation(n_vars, max_degree, seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n_vars, max_degree)
    net = compile_polynet(sys)
    assert net.n_hidden <= hidden_node_bound(n_vars, max_degree)
    for x in rng.uniform(-10, 10, size=(5, n_vars)):
        assert polynet_eval(net, x).tobytes() == eval_derivative(sys, x).tobytes()


def test_lorenz_sweep_is_bitwise_exact():
    sys = lorenz63()
    net = compile_polynet(sys)
    xs = np.random.default_rng(0).uniform(-30, 30, size=(1000, 3))
    assert polynet_eval(net, xs).tobytes() == eval_derivative(sys, xs).tobytes()
    for x in xs[:100]:
        assert polynet_eval(net, x).tobytes() == eval_derivative(sys, x).tobytes()


def test_stats_and_dot():
    net = compile_polynet(lorenz63())
    stats = net.stats()
    assert stats["hidden_nodes"] == 2 and stats["bound"] == 6
    dot = net.to_dot()
    assert dot.startswith("digraph")
    assert "x1*x2" in dot and "x1*x3" in dot
    edges = [ln for ln in dot.splitlines() if "->" in ln]
    assert edges and not any("dashed" in ln for ln in edges)
