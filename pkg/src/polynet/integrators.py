"""Recurrent circuits that integrate a PolyNet as pure neural computation.

Runge-Kutta circuits run ``s + 1`` micro-steps per time step: micro-step
``m < s`` evaluates stage ``m + 1``, and micro-step ``s`` commits
``x_{n+1}`` to the state node.  The weighted stage sum is accumulated by
the Horner ratio chain

    ACC_m = (ACC_{m-1} * U_m + K_m * W_m) * R_m

with ``U = W = 1`` and ``R = [b1/b2, ..., b_{s-1}/b_s, b_s, 0]``.  The
two-step Adams-Bashforth-Moulton circuit runs two micro-steps per time
step and evaluates the PolyNet once per micro-step.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from ._document import Doc
from .circuit import Circuit, NodeKind, make_cycle
from .compiler import PolyNet, polynet_eval
from .errors import BlowUpError, NonFiniteError, SeedingError, SpecError
from .polyode import as_state
from .trajectory import Trajectory


class RatioUndefinedWarning(UserWarning):
    """Ratio encoding impossible for this tableau; direct weights used instead."""


@dataclass(frozen=True)
class ButcherTableau:
    """Explicit Runge-Kutta coefficients.

    ``a`` is the full ``s x s`` matrix and must be strictly lower
    triangular.  ``h`` is optional here; builders take it from the tableau
    when not passed explicitly.
    """

    a: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    h: float | None = None
    name: str = "custom"

    def __post_init__(self):
        b = tuple(float(v) for v in self.b)
        s = len(b)
        if s < 1:
            raise ValueError("a tableau needs at least one stage")
        a = tuple(tuple(float(v) for v in row) for row in self.a)
        if len(a) != s or any(len(row) != s for row in a):
            raise ValueError(f"a must be {s}x{s}")
        for i in range(s):
            for j in range(i, s):
                if a[i][j] != 0.0:
                    raise ValueError(f"a[{i}][{j}] = {a[i][j]}: explicit tableau must be strictly lower")
        if not all(math.isfinite(v) for v in b + sum(a, ())):
            raise ValueError("tableau coefficients must be finite")
        if self.h is not None and not (math.isfinite(self.h) and self.h > 0):
            raise ValueError(f"h must be positive and finite, got {self.h}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not math.isclose(math.fsum(b), 1.0, rel_tol=0.0, abs_tol=1e-12):
            warnings.warn(
                f"tableau {self.name!r}: weights sum to {math.fsum(b)!r}, not 1 (inconsistent method)",
                stacklevel=3,
            )

    @property
    def s(self) -> int:
        return len(self.b)

    @classmethod
    def from_lower(cls, s, lower, b, h=None, name="custom") -> ButcherTableau:
        """Build from the row-major strictly-lower entries ``a21, a31, a32, a41, ...``."""
        lower = list(lower)
        if len(lower) != s * (s - 1) // 2:
            raise ValueError(f"expected {s * (s - 1) // 2} strictly-lower entries, got {len(lower)}")
        a = [[0.0] * s for _ in range(s)]
        it = iter(lower)
        for i in range(1, s):
            for j in range(i):
                a[i][j] = next(it)
        return cls(tuple(map(tuple, a)), tuple(b), h, name)

    def lower_entries(self) -> list[float]:
        return [self.a[i][j] for i in range(1, self.s) for j in range(i)]

    def with_step(self, h) -> ButcherTableau:
        return replace(self, h=float(h))

    @property
    def ratio_encodable(self) -> bool:
        """True when every ratio ``b_m / b_{m+1}`` is defined (``b_2 .. b_s`` nonzero)."""
        return all(v != 0.0 for v in self.b[1:])

    def ratios(self) -> list[float]:
        """The ``i2`` array ``[b1/b2, ..., b_{s-1}/b_s, b_s, 0]``."""
        b = self.b
        if not self.ratio_encodable:
            raise ZeroDivisionError(f"tableau {self.name!r} has a zero weight among b_2..b_s")
        return [b[m] / b[m + 1] for m in range(self.s - 1)] + [b[-1], 0.0]

    def to_dict(self) -> dict:
        out = {"s": self.s, "a": self.lower_entries(), "b": list(self.b)}
        if self.h is not None:
            out["h"] = self.h
        return out


def _f(x: str) -> float:
    return float(Fraction(x))


def _preset_table():
    half = 0.5
    return {
        "euler": (1, [], [1.0]),
        "midpoint": (2, [half], [0.0, 1.0]),
        "heun": (2, [1.0], [half, half]),
        "ralston": (2, [_f("2/3")], [0.25, 0.75]),
        "rk3": (3, [half, -1.0, 2.0], [_f("1/6"), _f("2/3"), _f("1/6")]),
        "rk4": (4, [half, 0.0, half, 0.0, 0.0, 1.0], [_f("1/6"), _f("1/3"), _f("1/3"), _f("1/6")]),
        "rk38": (
            4,
            [_f("1/3"), _f("-1/3"), 1.0, 1.0, -1.0, 1.0],
            [0.125, 0.375, 0.375, 0.125],
        ),
        # Cash-Karp fifth-order weights; b2 = b5 = 0 so it needs direct weights
        "cash-karp": (
            6,
            [
                0.2,
                _f("3/40"), _f("9/40"),
                0.3, -0.9, 1.2,
                _f("-11/54"), 2.5, _f("-70/27"), _f("35/27"),
                _f("1631/55296"), _f("175/512"), _f("575/13824"), _f("44275/110592"), _f("253/4096"),
            ],
            [_f("37/378"), 0.0, _f("250/621"), _f("125/594"), 0.0, _f("512/1771")],
        ),
    }


PRESET_TABLEAUS = tuple(_preset_table())


def tableau_preset(name: str, h=None) -> ButcherTableau:
    table = _preset_table()
    if name not in table:
        raise SpecError(f"unknown tableau preset {name!r}; choose from {sorted(table)}")
    s, lower, b = table[name]
    return ButcherTableau.from_lower(s, lower, b, h=h, name=name)


def parse_tableau(text: str, source=None) -> ButcherTableau:
    """Parse a tableau file: mapping with ``s``, ``a`` (strictly-lower, row-major), ``b``, optional ``h``."""
    doc = Doc.parse(text, source)
    fields = doc.mapping(required=("s", "a", "b"), optional=("h", "name"))
    s = fields["s"].integer(minimum=1)
    lower = [v.real() for v in fields["a"].sequence()]
    if len(lower) != s * (s - 1) // 2:
        raise fields["a"].error(
            f"expected {s * (s - 1) // 2} strictly-lower entries for s={s}, got {len(lower)}"
        )
    b = [v.real() for v in fields["b"].sequence()]
    if len(b) != s:
        raise fields["b"].error(f"expected {s} weights, got {len(b)}")
    h = None
    if "h" in fields:
        h = fields["h"].real()
        if h <= 0:
            raise fields["h"].error("h must be positive")
    name = fields["name"].string() if "name" in fields else (Path(source).stem if source else "custom")
    return ButcherTableau.from_lower(s, lower, b, h=h, name=name)


def load_tableau(spec: str, h=None) -> ButcherTableau:
    """Resolve a preset name or a tableau file path."""
    if spec in PRESET_TABLEAUS:
        return tableau_preset(spec, h)
    path = Path(spec)
    if not path.exists():
        raise SpecError(f"{spec!r} is neither a tableau preset {list(PRESET_TABLEAUS)} nor a file")
    tab = parse_tableau(path.read_text(), str(path))
    return tab.with_step(h) if h is not None else tab


def _check_step(h):
    h = float(h)
    if not (math.isfinite(h) and h > 0):
        raise ValueError(f"step size must be positive and finite, got {h}")
    return h


# ---------------------------------------------------------------------------
# Runge-Kutta circuits


@dataclass
class RkCircuit:
    circuit: Circuit
    tableau: ButcherTableau
    net: PolyNet
    h: float
    k_slots: str | None
    cycles: dict[str, str]
    state_node: str = "x"
    output_node: str = "out"
    capacity: int = 0
    encoding: str = "ratio"
    shift_matrix: bool = False

    @property
    def micro_period(self) -> int:
        return self.tableau.s + 1

    @property
    def method(self) -> str:
        return f"rk:{self.tableau.name}"

    def reset(self, x0):
        x0 = as_state(x0, self.net.n_inputs)
        self.circuit.reset()
        self.circuit.set_delay(self.state_node, x0)
        return self

    def step(self) -> np.ndarray:
        """Run one block of micro-steps; return ``x_{n+1}``."""
        for _ in range(self.micro_period):
            self.circuit.micro_step()
        return self.circuit.read_node(self.output_node)

    def set_tableau(self, tab: ButcherTableau):
        """Swap the coefficient cycles for another method without touching the network.

        Must be called on a block boundary.  The new method needs
        ``s - 1 <= capacity`` k-slots.
        """
        if self.k_slots is None:
            raise ValueError("the fixed RK4 circuit has no k-slot array; use build_rk_general")
        if self.circuit.micro_index % self.micro_period:
            raise ValueError("order can only be changed between time steps")
        cycles, encoding = _rk_cycles(tab, self.capacity, self.shift_matrix, strict_ratio=False)
        for gate, cyc in cycles.items():
            self.circuit.replace_cycle(gate, cyc)
        self.tableau = tab
        self.encoding = encoding


def build_rk4(net: PolyNet, h: float, shift_matrix: bool = False) -> RkCircuit:
    """The fixed-size classical RK4 circuit.

    Three delayed nodes carry state between micro-steps: the state ``x``,
    the gated stage increment ``stage_inc = i3 * k`` and the Horner
    accumulator ``acc``.  Gates cycle through ``i1 = [0,0,0,0,1]``,
    ``i2 = [1/2,1,2,1/6,0]`` and ``i3 = [1/2,1/2,1,0,0]``.
    """
    h = _check_step(h)
    sixth = 1.0 / 6.0
    c = Circuit("rk4")
    c.add_constant("h", h)
    c.add_gate("i1", make_cycle("i1", [0.0, 0.0, 0.0, 0.0, 1.0], shift_matrix))
    c.add_gate("i2", make_cycle("i2", [0.5, 1.0, 2.0, sixth, 0.0], shift_matrix))
    c.add_gate("i3", make_cycle("i3", [0.5, 0.5, 1.0, 0.0, 0.0], shift_matrix))
    c.add_sum("stage_arg")
    c.add_subgraph("f", net)
    c.add_product("k")
    c.add_product("stage_inc")
    c.add_sum("acc_in")
    c.add_product("acc")
    c.add_product("commit")
    c.add_sum("x")
    c.add_output("out")

    c.connect("x", "stage_arg", delayed=True)
    c.connect("stage_inc", "stage_arg", delayed=True)
    c.connect("stage_arg", "f")
    c.connect("h", "k")
    c.connect("f", "k")
    c.connect("i3", "stage_inc")
    c.connect("k", "stage_inc")
    c.connect("acc", "acc_in", delayed=True)
    c.connect("k", "acc_in")
    c.connect("acc_in", "acc")
    c.connect("i2", "acc")
    c.connect("i1", "commit")
    c.connect("acc", "commit", delayed=True)
    c.connect("x", "x", delayed=True)
    c.connect("commit", "x")
    c.connect("x", "out")
    c.finalize()
    tab = tableau_preset("rk4", h)
    return RkCircuit(c, tab, net, h, None, {"i1": "i1", "i2": "i2", "i3": "i3"},
                     shift_matrix=shift_matrix)


def _rk_cycles(tab: ButcherTableau, capacity: int, shift_matrix: bool, strict_ratio: bool):
    s = tab.s
    if s - 1 > capacity:
        raise ValueError(f"tableau needs {s - 1} k-slots, circuit has {capacity}")
    L = s + 1
    if tab.ratio_encodable:
        encoding = "ratio"
        R = tab.ratios()
        U = [1.0] * L
        W = [1.0] * L
    else:
        if strict_ratio:
            raise ZeroDivisionError(
                f"tableau {tab.name!r}: ratio encoding undefined (zero weight among b_2..b_s)"
            )
        warnings.warn(
            f"tableau {tab.name!r} has a zero weight among b_2..b_s; "
            "using the direct-weights encoding",
            RatioUndefinedWarning,
            stacklevel=3,
        )
        encoding = "direct"
        R = [1.0] * L
        U = [0.0] + [1.0] * (s - 1) + [0.0]
        W = list(tab.b) + [0.0]
    I1 = [0.0] * s + [1.0]

    def bank(fn):
        # entries shaped (capacity, 1) so they broadcast against (capacity, N)
        return [np.array([[fn(m, j)] for j in range(capacity)], dtype=np.float64).reshape(capacity, 1)
                for m in range(L)]

    A = bank(lambda m, j: tab.a[m][j] if m < s and j < m else 0.0)
    G = bank(lambda m, j: 1.0 if j == m else 0.0)
    H = bank(lambda m, j: 0.0 if j == m else 1.0)
    cycles = {
        "i1": make_cycle("i1", I1, shift_matrix),
        "i2": make_cycle("i2", R, shift_matrix),
        "u": make_cycle("u", U, shift_matrix),
        "w": make_cycle("w", W, shift_matrix),
        "a": make_cycle("a", A, shift_matrix),
        "capture": make_cycle("capture", G, shift_matrix),
        "hold": make_cycle("hold", H, shift_matrix),
    }
    return cycles, encoding


def build_rk_general(
    net: PolyNet,
    tab: ButcherTableau,
    h: float | None = None,
    capacity: int | None = None,
    strict_ratio: bool = False,
    shift_matrix: bool = False,
) -> RkCircuit:
    """Explicit RK circuit for any Butcher tableau.

    The k-slot array is a single node of shape ``(capacity, N)``; slot ``j``
    captures ``k_{j+1}`` through a timed one-hot gate and holds it for the
    rest of the step.  The stage argument is ``x_n`` plus the gated slots,
    folded in slot order.  Node count does not depend on ``s``.

    If some ``b_m`` with ``m >= 2`` is zero the ratio chain is undefined:
    ``strict_ratio=True`` raises ``ZeroDivisionError``, otherwise a
    :class:`RatioUndefinedWarning` is issued and per-stage weights are used.
    ``capacity`` (default ``s - 1``) reserves slots for later
    :meth:`RkCircuit.set_tableau` swaps to higher stage counts.
    """
    h = _check_step(h if h is not None else tab.h if tab.h is not None else float("nan"))
    capacity = tab.s - 1 if capacity is None else int(capacity)
    cycles, encoding = _rk_cycles(tab, capacity, shift_matrix, strict_ratio)

    c = Circuit(f"rk-{tab.name}")
    c.add_constant("h", h)
    for gate, cyc in cycles.items():
        c.add_gate(gate, cyc)
    c.add_product("stage_coef")  # a-bank * held k-slots
    c.add_sum("stage_arg", ndim=1)
    c.add_subgraph("f", net)
    c.add_product("k")
    c.add_product("k_capture")
    c.add_product("k_hold")
    c.add_sum("k_slots")
    c.add_product("acc_u")
    c.add_product("acc_w")
    c.add_sum("acc_in")
    c.add_product("acc")
    c.add_product("commit")
    c.add_sum("x")
    c.add_output("out")

    c.connect("a", "stage_coef")
    c.connect("k_slots", "stage_coef", delayed=True)
    c.connect("x", "stage_arg", delayed=True)
    c.connect("stage_coef", "stage_arg")
    c.connect("stage_arg", "f")
    c.connect("h", "k")
    c.connect("f", "k")
    c.connect("capture", "k_capture")
    c.connect("k", "k_capture")
    c.connect("hold", "k_hold")
    c.connect("k_slots", "k_hold", delayed=True)
    c.connect("k_capture", "k_slots")
    c.connect("k_hold", "k_slots")
    c.connect("acc", "acc_u", delayed=True)
    c.connect("u", "acc_u")
    c.connect("k", "acc_w")
    c.connect("w", "acc_w")
    c.connect("acc_u", "acc_in")
    c.connect("acc_w", "acc_in")
    c.connect("acc_in", "acc")
    c.connect("i2", "acc")
    c.connect("i1", "commit")
    c.connect("acc", "commit", delayed=True)
    c.connect("x", "x", delayed=True)
    c.connect("commit", "x")
    c.connect("x", "out")
    c.set_delay("k_slots", np.zeros((capacity, net.n_inputs)))
    c.finalize()
    return RkCircuit(
        c,
        tab.with_step(h),
        net,
        h,
        "k_slots",
        {name: name for name in cycles},
        capacity=capacity,
        encoding=encoding,
        shift_matrix=shift_matrix,
    )


# ---------------------------------------------------------------------------
# Adams-Bashforth-Moulton


@dataclass
class AbmCircuit:
    circuit: Circuit
    net: PolyNet
    h: float
    prev_deriv_node: str = "f_prev"
    predictor_node: str = "pred"
    state_node: str = "x"
    output_node: str = "out"
    seeded: bool = field(default=False)

    micro_period = 2
    method = "abm2"

    def seed(self, x0, x1):
        """Load ``x_1`` as the state and ``f(x_0)`` (through the PolyNet) as the held derivative."""
        x0 = as_state(x0, self.net.n_inputs)
        x1 = as_state(x1, self.net.n_inputs)
        self.circuit.reset()
        self.circuit.set_delay(self.state_node, x1)
        self.circuit.set_delay(self.prev_deriv_node, polynet_eval(self.net, x0))
        self.seeded = True
        return self

    def micro_step(self):
        if not self.seeded:
            raise SeedingError("ABM circuit stepped before x0 and x1 were seeded")
        return self.circuit.micro_step()

    def step(self) -> np.ndarray:
        for _ in range(self.micro_period):
            self.micro_step()
        return self.circuit.read_node(self.output_node)


def build_abm2(net: PolyNet, h: float, shift_matrix: bool = False) -> AbmCircuit:
    """Two-step Adams-Bashforth predictor with a two-step Adams-Moulton corrector.

    Micro-step 0 evaluates ``f(x_n)``, stores it in ``f_prev`` and forms
    ``P = x_n + (3h/2) f(x_n) + (-h/2) f(x_{n-1})``.  Micro-step 1 evaluates
    ``f(P)`` and commits ``x_{n+1} = x_n + (h/2) (f(P) + f(x_n))``.
    """
    h = _check_step(h)
    c = Circuit("abm2")
    c.add_constant("c_ab1", 1.5 * h)
    c.add_constant("c_ab0", -0.5 * h)
    c.add_constant("c_am", 0.5 * h)
    c.add_gate("sel_x", make_cycle("sel_x", [1.0, 0.0], shift_matrix))
    c.add_gate("sel_p", make_cycle("sel_p", [0.0, 1.0], shift_matrix))
    c.add_gate("capture", make_cycle("capture", [1.0, 0.0], shift_matrix))
    c.add_gate("hold", make_cycle("hold", [0.0, 1.0], shift_matrix))
    c.add_gate("commit_gate", make_cycle("commit_gate", [0.0, 1.0], shift_matrix))
    for node in ("arg_x", "arg_p", "ab1", "ab0", "f_cap", "f_hold", "am", "commit"):
        c.add_product(node)
    for node in ("stage_arg", "pred", "f_prev", "am_sum", "x"):
        c.add_sum(node)
    c.add_subgraph("f", net)
    c.add_output("out")

    c.connect("sel_x", "arg_x")
    c.connect("x", "arg_x", delayed=True)
    c.connect("sel_p", "arg_p")
    c.connect("pred", "arg_p", delayed=True)
    c.connect("arg_x", "stage_arg")
    c.connect("arg_p", "stage_arg")
    c.connect("stage_arg", "f")
    # f(x_n) captured on micro-step 0, held through micro-step 1
    c.connect("capture", "f_cap")
    c.connect("f", "f_cap")
    c.connect("hold", "f_hold")
    c.connect("f_prev", "f_hold", delayed=True)
    c.connect("f_cap", "f_prev")
    c.connect("f_hold", "f_prev")
    # predictor
    c.connect("c_ab1", "ab1")
    c.connect("f", "ab1")
    c.connect("c_ab0", "ab0")
    c.connect("f_prev", "ab0", delayed=True)
    c.connect("x", "pred")
    c.connect("ab1", "pred")
    c.connect("ab0", "pred")
    # corrector
    c.connect("f", "am_sum")
    c.connect("f_prev", "am_sum", delayed=True)
    c.connect("c_am", "am")
    c.connect("am_sum", "am")
    c.connect("commit_gate", "commit")
    c.connect("am", "commit")
    c.connect("x", "x", delayed=True)
    c.connect("commit", "x")
    c.connect("x", "out")
    c.finalize()
    return AbmCircuit(c, net, h)


# ---------------------------------------------------------------------------
# Driving a circuit


class SeedPolicy(str, enum.Enum):
    RK4_BOOTSTRAP = "rk4-bootstrap"
    EXPLICIT = "explicit"


def integrate(circ, x0, n_steps: int, seed_policy="rk4-bootstrap", x1=None) -> Trajectory:
    """Drive ``circ`` from ``x0`` for ``n_steps`` time steps, harvesting one state per block.

    For an :class:`AbmCircuit`, ``x_1`` comes from one neural RK4 step
    (``seed_policy="rk4-bootstrap"``) or is given (``"explicit"`` with
    ``x1``).  On a non-finite value a :class:`BlowUpError` is raised with
    the partial trajectory attached.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    x0 = as_state(x0, circ.net.n_inputs)
    states = [x0]
    meta = {}
    try:
        # overflow surfaces as NonFiniteError, so numpy's own warnings are noise
        with np.errstate(over="ignore", invalid="ignore"):
            _drive(circ, x0, n_steps, seed_policy, x1, states, meta)
    except NonFiniteError as exc:
        traj = Trajectory.from_states(states, circ.h, method=circ.method, engine="neural", meta=meta)
        raise BlowUpError(len(states), traj, exc) from exc
    return Trajectory.from_states(
        states, circ.h, method=circ.method, engine="neural", matched=False, meta=meta
    )


def _drive(circ, x0, n_steps, seed_policy, x1, states, meta):
    """Append one state per time step to ``states``."""
    if not isinstance(circ, AbmCircuit):
        circ.reset(x0)
        for _ in range(n_steps):
            states.append(np.array(circ.step()))
        return
    policy = SeedPolicy(seed_policy)
    meta["seed_policy"] = policy.value
    if n_steps < 1:
        return
    if policy is SeedPolicy.EXPLICIT:
        if x1 is None:
            raise SeedingError("explicit seed policy needs x1")
        x1 = as_state(x1, circ.net.n_inputs)
    else:
        x1 = build_rk4(circ.net, circ.h).reset(x0).step()
    states.append(np.array(x1))
    if n_steps >= 2:
        circ.seed(x0, x1)
        for _ in range(n_steps - 1):
            states.append(np.array(circ.step()))


def census(rk: RkCircuit) -> dict[str, int]:
    """Counts of Sum, Product and Subgraph nodes (the fixed-size claim)."""
    counts = rk.circuit.census()
    return {k.value: counts[k] for k in (NodeKind.SUM, NodeKind.PRODUCT, NodeKind.SUBGRAPH)}
