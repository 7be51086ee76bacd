"""Classical integrators used as oracles, and the perturbation experiment.

``matched=True`` steppers perform exactly the floating-point operations of
the corresponding circuit, in the same order, so neural and classical
trajectories agree bit for bit.  ``matched=False`` steppers use the
textbook formulas and differ only by rounding.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .compiler import compile_polynet
from .errors import BlowUpError, SeedingError
from .integrators import (
    AbmCircuit,
    ButcherTableau,
    SeedPolicy,
    build_abm2,
    build_rk4,
    build_rk_general,
    integrate,
    tableau_preset,
)
from .polyode import PolynomialSystem, as_state, eval_derivative
from .trajectory import DivergenceSeries, Trajectory


def _horner_sequences(tab: ButcherTableau):
    s = tab.s
    if tab.ratio_encodable:
        return tab.ratios()[:s], [1.0] * s, [1.0] * s
    return [1.0] * s, [0.0] + [1.0] * (s - 1), list(tab.b)


def classical_rk_step(sys: PolynomialSystem, tab: ButcherTableau, x, matched: bool = True, h=None):
    """One explicit RK step ``x + sum_i b_i k_i``.

    Matched order: stage arguments ``x + a_i1 k_1 + ... + a_i,i-1 k_{i-1}``
    left to right, ``k_i = h * f``, and the weighted sum through the Horner
    chain ``acc = (acc * u_i + k_i * w_i) * r_i`` starting from ``acc = 0``.
    """
    h = tab.h if h is None else h
    x = as_state(x, sys.n_vars)
    s = tab.s
    ks = []
    for i in range(s):
        arg = x
        for j in range(i):
            arg = arg + tab.a[i][j] * ks[j]
        ks.append(h * eval_derivative(sys, arg))
    if matched:
        r, u, w = _horner_sequences(tab)
        acc = 0.0
        for i in range(s):
            acc = (acc * u[i] + ks[i] * w[i]) * r[i]
        return x + acc
    total = tab.b[0] * ks[0]
    for i in range(1, s):
        total = total + tab.b[i] * ks[i]
    return x + total


def classical_abm2_step(sys: PolynomialSystem, x_n, f_prev, h: float, matched: bool = True):
    """One predictor-corrector step.

    ``f_prev`` is ``f(x_{n-1})``.  Returns ``(x_{n+1}, f(x_n))``; the second
    item is the cache for the following call.
    """
    if f_prev is None:
        raise SeedingError("derivative cache not seeded with f(x_{n-1})")
    x_n = as_state(x_n, sys.n_vars)
    fn = eval_derivative(sys, x_n)
    if matched:
        pred = x_n + (1.5 * h) * fn + (-0.5 * h) * f_prev
        fp = eval_derivative(sys, pred)
        return x_n + (0.5 * h) * (fp + fn), fn
    pred = x_n + h * (1.5 * fn - 0.5 * f_prev)
    fp = eval_derivative(sys, pred)
    return x_n + 0.5 * h * (fn + fp), fn


def classical_integrate(
    sys: PolynomialSystem,
    method,
    x0,
    n_steps: int,
    h: float,
    matched: bool = True,
    seed_policy="rk4-bootstrap",
    x1=None,
) -> Trajectory:
    """Classical counterpart of :func:`polynet.integrators.integrate`.

    ``method`` is a :class:`ButcherTableau` or ``"abm2"``.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    x = as_state(x0, sys.n_vars)
    states = [x]
    engine = "classical-matched" if matched else "classical-naive"
    meta = {}

    def fail(k):
        traj = Trajectory.from_states(states, h, method=label, engine=engine, matched=matched)
        raise BlowUpError(k, traj)

    if isinstance(method, ButcherTableau):
        tab = method.with_step(h)
        label = f"rk:{tab.name}"
        for k in range(1, n_steps + 1):
            with np.errstate(all="ignore"):
                x = classical_rk_step(sys, tab, x, matched)
            if not np.all(np.isfinite(x)):
                fail(k)
            states.append(x)
    elif method == "abm2":
        label = "abm2"
        policy = SeedPolicy(seed_policy)
        meta["seed_policy"] = policy.value
        if n_steps >= 1:
            if policy is SeedPolicy.EXPLICIT:
                if x1 is None:
                    raise SeedingError("explicit seed policy needs x1")
                x1 = as_state(x1, sys.n_vars)
            else:
                x1 = classical_rk_step(sys, tableau_preset("rk4", h), x, matched)
            states.append(x1)
            f_prev = eval_derivative(sys, x)
            x = x1
            for k in range(2, n_steps + 1):
                with np.errstate(all="ignore"):
                    x, f_prev = classical_abm2_step(sys, x, f_prev, h, matched)
                if not np.all(np.isfinite(x)):
                    fail(k)
                states.append(x)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Trajectory.from_states(states, h, method=label, engine=engine, matched=matched, meta=meta)


def run(sys, method, engine: str, x0, n_steps: int, h: float, seed_policy="rk4-bootstrap", x1=None):
    """Integrate with any engine: ``neural``, ``classical-matched`` or ``classical-naive``.

    ``method`` is ``"rk4"`` (fixed RK4 circuit), ``"abm2"`` or a
    :class:`ButcherTableau` (general RK circuit).
    """
    if engine == "neural":
        net = compile_polynet(sys)
        if method == "rk4":
            circ = build_rk4(net, h)
        elif method == "abm2":
            circ = build_abm2(net, h)
        else:
            circ = build_rk_general(net, method, h=h)
        return integrate(circ, x0, n_steps, seed_policy, x1)
    if engine not in ("classical-matched", "classical-naive"):
        raise ValueError(f"unknown engine {engine!r}")
    if method == "rk4":
        method = tableau_preset("rk4", h)
    return classical_integrate(
        sys, method, x0, n_steps, h, engine == "classical-matched", seed_policy, x1
    )


def divergence(a: Trajectory, b: Trajectory, label: str = "") -> DivergenceSeries:
    """Pointwise Euclidean distance between two trajectories on the same grid."""
    if a.states.shape != b.states.shape:
        raise ValueError(f"trajectory shapes differ: {a.states.shape} vs {b.states.shape}")
    if not np.array_equal(a.times, b.times):
        raise ValueError("trajectories are on different time grids")
    diff = a.states - b.states
    return DivergenceSeries(a.times, np.sqrt(np.sum(diff * diff, axis=1)), label)


DEFAULT_IC = (1.0, 1.0, 1.0)


def spin_up(sys, x0=DEFAULT_IC, h=0.01, n_steps=1000):
    """Move ``x0`` onto the attractor with matched classical RK4."""
    return classical_integrate(sys, tableau_preset("rk4", h), x0, n_steps, h).final


def perturbation_experiment(
    sys: PolynomialSystem,
    method,
    h: float,
    n_steps: int,
    deltas,
    x0=None,
    spinup_steps: int = 1000,
    direction=None,
    include_neural: bool = True,
    max_workers: int | None = None,
):
    """Divergence of perturbed runs from a matched classical reference.

    For each ``delta`` the matched classical run from ``x0`` is compared
    with the run from ``x0 + delta * direction`` (default: first axis).
    When ``include_neural`` is set, a final series compares the neural
    circuit with the naive classical integrator over the same grid.
    ``x0`` defaults to (1, 1, 1) advanced ``spinup_steps`` steps.
    """
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ValueError("at least one perturbation is required")
    if not all(math.isfinite(d) for d in deltas):
        raise ValueError("perturbations must be finite")
    if x0 is None:
        x0 = spin_up(sys, DEFAULT_IC, h, spinup_steps)
    x0 = as_state(x0, sys.n_vars)
    e = np.zeros(sys.n_vars)
    e[0] = 1.0
    direction = e if direction is None else as_state(direction, sys.n_vars)

    def classical(start, matched=True):
        return run(sys, method, "classical-matched" if matched else "classical-naive", start, n_steps, h)

    reference = classical(x0)

    def one(delta):
        return divergence(reference, classical(x0 + delta * direction), f"delta={delta!r}")

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        series = list(pool.map(one, deltas))
    if include_neural:
        neural = run(sys, method, "neural", x0, n_steps, h)
        series.append(divergence(neural, classical(x0, matched=False), "neural-vs-naive"))
    return series


def global_error(method, h: float, t_end: float = 1.0, engine: str = "neural", rate: float = 1.0):
    """Error at ``t_end`` on ``dx/dt = -rate x``, ``x(0) = 1``, against ``exp(-rate t)``."""
    from .polyode import linear_decay

    n = round(t_end / h)
    if not math.isclose(n * h, t_end, rel_tol=1e-12):
        raise ValueError(f"t_end={t_end} is not a multiple of h={h}")
    traj = run(linear_decay(rate), method, engine, [1.0], n, h)
    return abs(traj.final[0] - math.exp(-rate * t_end))


def convergence_order(hs, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    lh = np.log(np.asarray(hs, dtype=float))
    le = np.log(np.asarray(errors, dtype=float))
    slope, _ = np.polyfit(lh, le, 1)
    return float(slope)
