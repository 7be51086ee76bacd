import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polynet.compiler import compile_polynet
from polynet.errors import BlowUpError, SeedingError, SpecError
from polynet.integrators import (
    ButcherTableau,
    RatioUndefinedWarning,
    build_abm2,
    build_rk4,
    build_rk_general,
    census,
    integrate,
    parse_tableau,
    tableau_preset,
)
from polynet.polyode import PolynomialSystem, linear_decay, lorenz63, random_system
from polynet.reference import classical_rk_step

DECAY = compile_polynet(linear_decay(1.0))


def exact_rk_step(a, b, lam, h, x):
    """One explicit RK step for dx/dt = lam*x in rational arithmetic."""
    ks = []
    for i in range(len(b)):
        arg = x + sum(a[i][j] * ks[j] for j in range(i))
        ks.append(h * lam * arg)
    return x + sum(bi * k for bi, k in zip(b, ks))


F = Fraction
RK4_A = [[], [F(1, 2)], [0, F(1, 2)], [0, 0, 1]]
RK4_B = [F(1, 6), F(1, 3), F(1, 3), F(1, 6)]


def test_rk4_single_step_matches_rational_oracle():
    expected = exact_rk_step(RK4_A, RK4_B, -1, F(1, 10), F(1))
    assert expected == F(9048375, 10**7)
    for circ in (build_rk4(DECAY, 0.1), build_rk_general(DECAY, tableau_preset("rk4"), 0.1)):
        got = circ.reset([1.0]).step()[0]
        assert got == pytest.approx(float(expected), abs=1e-15)


@pytest.mark.parametrize(
    "name, a, b",
    [
        ("euler", [[]], [F(1)]),
        ("midpoint", [[], [F(1, 2)]], [F(0), F(1)]),
        ("heun", [[], [F(1)]], [F(1, 2), F(1, 2)]),
        ("rk3", [[], [F(1, 2)], [F(-1), F(2)]], [F(1, 6), F(2, 3), F(1, 6)]),
    ],
)
def test_general_circuit_matches_rational_oracle(name, a, b):
    circ = build_rk_general(DECAY, tableau_preset(name), 0.1)
    x_exact, x = F(1), 1.0
    for _ in range(5):
        x_exact = exact_rk_step(a, b, -1, F(1, 10), x_exact)
        x = circ.step()[0] if _ else circ.reset([1.0]).step()[0]
        assert x == pytest.approx(float(x_exact), abs=1e-14)


def test_euler_and_midpoint_one_step_values():
    assert build_rk_general(DECAY, tableau_preset("euler"), 0.1).reset([1.0]).step()[0] == 0.9
    mid = build_rk_general(DECAY, tableau_preset("midpoint"), 0.1).reset([1.0]).step()[0]
    assert mid == pytest.approx(0.905, abs=1e-15)


def test_abm2_first_step_by_hand():
    h = F(1, 10)
    x0, x1 = F(1), F(9048375, 10**7)
    pred = x1 + F(3, 2) * h * (-x1) - F(1, 2) * h * (-x0)
    x2 = x1 + h / 2 * (-pred - x1)
    assert float(pred) == pytest.approx(0.8191118, abs=1e-7)
    assert x2 == F(81864003125, 10**11)
    assert float(x2) == pytest.approx(0.8186399, abs=5e-7)

    circ = build_abm2(DECAY, 0.1).seed([1.0], [float(x1)])
    circ.micro_step()
    assert circ.circuit.read_node("pred")[0] == pytest.approx(float(pred), abs=1e-15)
    circ.micro_step()
    assert circ.circuit.read_node("out")[0] == pytest.approx(float(x2), abs=1e-15)


def test_abm2_trajectory_with_explicit_seed():
    traj = integrate(build_abm2(DECAY, 0.1), [1.0], 2, seed_policy="explicit", x1=[0.9048375])
    np.testing.assert_allclose(traj.states[:, 0], [1.0, 0.9048375, 0.81864003125], atol=1e-15)
    assert traj.meta["seed_policy"] == "explicit"


def test_abm2_bootstrap_uses_rk4_step():
    traj = integrate(build_abm2(DECAY, 0.1), [1.0], 1)
    assert traj.states[1, 0] == build_rk4(DECAY, 0.1).reset([1.0]).step()[0]


def test_unseeded_abm_raises():
    with pytest.raises(SeedingError):
        build_abm2(DECAY, 0.1).micro_step()
    with pytest.raises(SeedingError):
        integrate(build_abm2(DECAY, 0.1), [1.0], 3, seed_policy="explicit")


def test_abm_uses_two_derivative_evaluations_per_step():
    circ = build_abm2(compile_polynet(lorenz63()), 0.01).seed([1.0, 1.0, 1.0], [1.0, 1.1, 1.0])
    circ.circuit.enable_trace()
    for _ in range(7):
        circ.step()
    evals = [row for row in circ.circuit.trace if row[1] == "f"]
    assert len(evals) == 14


ZERO = compile_polynet(PolynomialSystem(3, 2, []))


@pytest.mark.parametrize(
    "make",
    [
        lambda: build_rk4(ZERO, 0.1),
        lambda: build_rk_general(ZERO, tableau_preset("rk38"), 0.1),
        lambda: build_abm2(ZERO, 0.1),
    ],
)
def test_zero_field_keeps_state(make):
    x0 = [1.5, -2.0, 0.25]
    traj = integrate(make(), x0, 20)
    assert np.all(traj.states == np.array(x0))


@pytest.mark.parametrize("name", ["euler", "midpoint", "rk3", "rk4", "cash-karp"])
def test_micro_period_is_stages_plus_one(name):
    tab = tableau_preset(name)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RatioUndefinedWarning)
        circ = build_rk_general(DECAY, tab, 0.1)
    assert circ.micro_period == tab.s + 1
    circ.reset([1.0])
    circ.step()
    assert circ.circuit.micro_index == tab.s + 1
    assert build_rk4(DECAY, 0.1).micro_period == 5


def test_census_independent_of_stage_count():
    net = compile_polynet(lorenz63())
    counts = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RatioUndefinedWarning)
        for name in ("euler", "midpoint", "rk4", "cash-karp"):
            counts.append(census(build_rk_general(net, tableau_preset(name), 0.01)))
    assert all(c == counts[0] for c in counts)
    assert counts[0]["subgraph"] == 1


def horner_value(tab, ks):
    if tab.ratio_encodable:
        r, u, w = tab.ratios()[: tab.s], [1.0] * tab.s, [1.0] * tab.s
    else:
        r, u, w = [1.0] * tab.s, [0.0] + [1.0] * (tab.s - 1), list(tab.b)
    acc = 0.0
    for i in range(tab.s):
        acc = (acc * u[i] + ks[i] * w[i]) * r[i]
    return acc


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0.05, 2.0), min_size=1, max_size=6),
    st.lists(st.floats(-10, 10), min_size=6, max_size=6),
    st.booleans(),
)
def test_horner_chain_equals_weighted_sum(weights, ks, zero_middle):
    b = list(weights)
    if zero_middle and len(b) > 1:
        b[1] = 0.0
    s = len(b)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        tab = ButcherTableau.from_lower(s, [0.0] * (s * (s - 1) // 2), b)
    ks = ks[:s]
    direct = sum(bi * ki for bi, ki in zip(b, ks))
    scale = sum(abs(bi * ki) for bi, ki in zip(b, ks))
    assert abs(horner_value(tab, ks) - direct) <= 1e-13 * max(scale, 1e-300)


def test_zero_weight_warns_or_raises():
    tab = tableau_preset("cash-karp")
    assert not tab.ratio_encodable
    with pytest.warns(RatioUndefinedWarning):
        circ = build_rk_general(DECAY, tab, 0.1)
    assert circ.encoding == "direct"
    with pytest.raises(ZeroDivisionError):
        build_rk_general(DECAY, tab, 0.1, strict_ratio=True)


def test_midpoint_uses_ratio_chain():
    # b1 = 0 keeps every ratio b_m / b_{m+1} defined
    circ = build_rk_general(DECAY, tableau_preset("midpoint"), 0.1, strict_ratio=True)
    assert circ.encoding == "ratio"


def test_direct_weights_match_classical():
    net = compile_polynet(lorenz63())
    with pytest.warns(RatioUndefinedWarning):
        circ = build_rk_general(net, tableau_preset("cash-karp"), 0.01)
    x = np.array([1.0, 2.0, 3.0])
    circ.reset(x)
    tab = tableau_preset("cash-karp", 0.01)
    for _ in range(20):
        x = classical_rk_step(lorenz63(), tab, x)
        assert circ.step().tobytes() == x.tobytes()


def test_hot_swap_euler_to_rk4():
    circ = build_rk_general(DECAY, tableau_preset("euler"), 0.1, capacity=3)
    circ.reset([1.0])
    assert circ.step()[0] == 0.9
    circ.set_tableau(tableau_preset("rk4"))
    got = circ.step()[0]
    assert got == classical_rk_step(linear_decay(), tableau_preset("rk4", 0.1), [0.9])[0]
    assert circ.method == "rk:rk4"

    def final_error(h, swap_to):
        n = round(1 / h)
        c = build_rk_general(DECAY, tableau_preset("euler"), h, capacity=3)
        c.set_tableau(tableau_preset(swap_to))
        return abs(integrate(c, [1.0], n).final[0] - math.exp(-1))

    e1, e2 = final_error(0.1, "rk4"), final_error(0.05, "rk4")
    assert math.log2(e1 / e2) == pytest.approx(4.0, abs=0.3)


def test_hot_swap_needs_capacity():
    circ = build_rk_general(DECAY, tableau_preset("euler"), 0.1)
    with pytest.raises(ValueError, match="k-slots"):
        circ.set_tableau(tableau_preset("rk4"))
    with pytest.raises(ValueError):
        build_rk4(DECAY, 0.1).set_tableau(tableau_preset("euler"))


def test_shift_matrix_variant_is_bitwise_equal():
    net = compile_polynet(lorenz63())
    x0 = [1.0, 1.0, 1.0]
    pairs = [
        (build_rk4(net, 0.01), build_rk4(net, 0.01, shift_matrix=True)),
        (
            build_rk_general(net, tableau_preset("rk38"), 0.01),
            build_rk_general(net, tableau_preset("rk38"), 0.01, shift_matrix=True),
        ),
        (build_abm2(net, 0.01), build_abm2(net, 0.01, shift_matrix=True)),
    ]
    for a, b in pairs:
        ta, tb = integrate(a, x0, 200), integrate(b, x0, 200)
        assert ta.states.tobytes() == tb.states.tobytes()


def test_zero_steps():
    for circ in (build_rk4(DECAY, 0.1), build_abm2(DECAY, 0.1)):
        traj = integrate(circ, [2.0], 0)
        assert traj.states.shape == (1, 1) and traj.states[0, 0] == 2.0
    with pytest.raises(ValueError):
        integrate(build_rk4(DECAY, 0.1), [1.0], -1)


def test_blow_up_carries_partial_trajectory():
    quad = compile_polynet(PolynomialSystem(1, 2, [(0, 1.0, (2,))]))
    with pytest.raises(BlowUpError) as info:
        with np.errstate(over="ignore"):
            integrate(build_rk4(quad, 0.5), [10.0], 50)
    err = info.value
    traj = err.trajectory
    assert err.step == len(traj.states)
    assert 1 <= len(traj.states) < 51
    assert np.all(np.isfinite(traj.states))
    assert err.cause is not None


@pytest.mark.parametrize("h", [0.0, -0.1, float("nan"), float("inf")])
def test_bad_step_size(h):
    with pytest.raises(ValueError):
        build_rk4(DECAY, h)


def test_parse_tableau():
    tab = parse_tableau("s: 2\na: [0.5]\nb: [0, 1]\nh: 0.1\nname: mid\n")
    assert tab.s == 2 and tab.a[1][0] == 0.5 and tab.b == (0.0, 1.0) and tab.h == 0.1
    assert tab.name == "mid"
    assert parse_tableau(tableau_preset("rk4").to_dict().__repr__().replace("'", '"')).b == (
        tableau_preset("rk4").b
    )


@pytest.mark.parametrize(
    "text, line",
    [
        ("s: 2\na: [0.5, 1]\nb: [0, 1]\n", 2),
        ("s: 2\na: [0.5]\nb: [1]\n", 3),
        ("s: 2\na: [0.5]\nb: [0, 1]\nh: -1\n", 4),
        ("s: 2\na: [0.5]\nb: [0, 1]\nc: [0, 1]\n", 4),
    ],
)
def test_parse_tableau_errors(text, line):
    with pytest.raises(SpecError) as info:
        parse_tableau(text, "tab.yaml")
    assert info.value.line == line


def test_weights_not_summing_to_one_warn():
    with pytest.warns(UserWarning):
        ButcherTableau.from_lower(2, [0.5], [0.5, 0.4])


def test_tableau_rejects_upper_entries():
    with pytest.raises(ValueError):
        ButcherTableau(((0.0, 1.0), (0.0, 0.0)), (0.5, 0.5))


def test_unknown_preset():
    with pytest.raises(SpecError):
        tableau_preset("rk99")


def test_neural_random_systems_match_classical():
    rng = np.random.default_rng(7)
    for _ in range(5):
        sys = random_system(rng, 3, 2, coeff_range=(-0.5, 0.5))
        net = compile_polynet(sys)
        circ = build_rk_general(net, tableau_preset("rk3"), 0.01)
        x = rng.uniform(-1, 1, 3)
        circ.reset(x)
        for _ in range(10):
            x = classical_rk_step(sys, tableau_preset("rk3", 0.01), x)
            assert circ.step().tobytes() == x.tobytes()
