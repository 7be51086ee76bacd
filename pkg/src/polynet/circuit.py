"""Recurrent dataflow circuits with delay edges and cyclic coefficient feeds.

A :class:`Circuit` is built node by node, then frozen into a schedule.
Each :meth:`Circuit.micro_step` evaluates every node once in schedule
order, reading delayed in-edges from the values committed at the end of
the previous micro-step, then commits the new delay state and rotates
every coefficient cycle by one position.

Node values are float64 scalars or numpy arrays; Sum and Product are
elementwise with numpy broadcasting and always accumulate their inputs
left to right in edge insertion order, so results are bitwise
reproducible.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import CircuitError, NonFiniteError


class NodeKind(enum.Enum):
    SUM = "sum"
    PRODUCT = "product"
    CONSTANT = "constant"
    INPUT = "input"
    OUTPUT = "output"
    SUBGRAPH = "subgraph"
    GATE = "gate"


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    weight: float = 1.0
    delayed: bool = False


@dataclass(frozen=True)
class CoefficientCycle:
    """A rotating coefficient array; emits ``values[position]`` then advances.

    Entries may be scalars or equally-shaped arrays (a bank of parallel
    cycles read by one gate node).
    """

    name: str
    values: tuple
    position: int = 0

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("a coefficient cycle needs at least one entry")
        object.__setattr__(self, "values", tuple(_freeze(v) for v in self.values))
        object.__setattr__(self, "position", self.position % len(self.values))

    def __len__(self):
        return len(self.values)

    def read(self):
        return self.values[self.position]

    def rotated(self) -> CoefficientCycle:
        # values are already frozen; skip re-validation on the hot path
        new = object.__new__(CoefficientCycle)
        object.__setattr__(new, "name", self.name)
        object.__setattr__(new, "values", self.values)
        object.__setattr__(new, "position", (self.position + 1) % len(self.values))
        return new

    def reset(self) -> CoefficientCycle:
        return replace(self, position=0)

    def same_state(self, other) -> bool:
        return (
            type(other) is type(self)
            and self.position == other.position
            and len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self.values, other.values))
        )


class ShiftRegisterCycle:
    """Literal shift-tensor realization of a coefficient cycle.

    The register holds the whole coefficient array.  A constant one-hot
    vector contracted with it extracts the current coefficient and a
    cyclic shift matrix rotates it for the next micro-step.  Emits the same
    values as :class:`CoefficientCycle` at O(L^2) cost per rotation.
    """

    def __init__(self, name, values, register=None):
        self.name = name
        self.values = tuple(_freeze(v) for v in values)
        if not self.values:
            raise ValueError("a coefficient cycle needs at least one entry")
        L = len(self.values)
        self.register = (
            np.stack([np.asarray(v, dtype=np.float64) for v in self.values])
            if register is None
            else register
        )
        self.register.setflags(write=False)
        self._onehot = np.zeros(L)
        self._onehot[0] = 1.0
        self._shift = np.roll(np.eye(L), 1, axis=1)

    def __len__(self):
        return len(self.values)

    def read(self):
        out = np.tensordot(self._onehot, self.register, axes=1)
        return float(out) if out.ndim == 0 else out

    def rotated(self) -> ShiftRegisterCycle:
        return ShiftRegisterCycle(
            self.name, self.values, np.tensordot(self._shift, self.register, axes=1)
        )

    def reset(self) -> ShiftRegisterCycle:
        return ShiftRegisterCycle(self.name, self.values)

    def same_state(self, other) -> bool:
        return type(other) is type(self) and np.array_equal(self.register, other.register)


def make_cycle(name, values, shift_matrix=False):
    cls = ShiftRegisterCycle if shift_matrix else CoefficientCycle
    return cls(name, tuple(values))


def shift_rotate(cycle):
    """Advance a coefficient cycle by one position (pure)."""
    return cycle.rotated()


def _freeze(v):
    if np.ndim(v) == 0:
        return float(v)
    arr = np.array(v, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass
class _Node:
    id: str
    kind: NodeKind
    value: Any = None
    net: Any = None
    ndim: int | None = None
    label: str | None = None
    inputs: list = field(default_factory=list)


_NOT_EVALUATED = object()


class Circuit:
    """A recurrent dataflow graph.

    Build with the ``add_*`` methods and :meth:`connect`, then call
    :meth:`finalize` (done implicitly by the first :meth:`micro_step`).

    Examples
    --------
    >>> c = Circuit()
    >>> c.add_constant("three", 3.0)
    'three'
    >>> c.add_product("p")
    'p'
    >>> c.connect("p", "p", delayed=True)
    >>> c.connect("three", "p")
    >>> c.set_delay("p", 2.0)
    >>> [float(c.micro_step().read_node("p")) for _ in range(3)]
    [6.0, 18.0, 54.0]
    """

    def __init__(self, name="circuit"):
        self.name = name
        self._nodes: list[_Node] = []
        self._index: dict[str, int] = {}
        self.edges: list[Edge] = []
        self._cycles: dict[int, Any] = {}
        self._initial_cycles: dict[int, Any] = {}
        self._initial_delay: dict[int, Any] = {}
        self._feeds: dict[int, Any] = {}
        self._frozen = False
        self.micro_index = 0
        self.trace = None

    # -- construction ---------------------------------------------------

    def _add(self, node: _Node) -> str:
        if self._frozen:
            raise CircuitError("circuit is finalized; cannot add nodes")
        if node.id in self._index:
            raise CircuitError(f"duplicate node id {node.id!r}")
        self._index[node.id] = len(self._nodes)
        self._nodes.append(node)
        return node.id

    def add_constant(self, id, value, label=None):
        return self._add(_Node(id, NodeKind.CONSTANT, value=_freeze(value), label=label))

    def add_input(self, id, label=None):
        return self._add(_Node(id, NodeKind.INPUT, label=label))

    def add_sum(self, id, ndim=None, label=None):
        """Additive node.  With ``ndim`` set, inputs of higher rank are folded
        over their leading axis, row by row, into the running sum."""
        return self._add(_Node(id, NodeKind.SUM, ndim=ndim, label=label))

    def add_product(self, id, label=None):
        return self._add(_Node(id, NodeKind.PRODUCT, label=label))

    def add_output(self, id, label=None):
        return self._add(_Node(id, NodeKind.OUTPUT, label=label))

    def add_subgraph(self, id, net, label=None):
        """Node evaluating ``net.evaluate(vector)`` (an embedded PolyNet) in one step."""
        return self._add(_Node(id, NodeKind.SUBGRAPH, net=net, label=label))

    def add_gate(self, id, cycle, label=None):
        self._add(_Node(id, NodeKind.GATE, label=label))
        idx = self._index[id]
        self._cycles[idx] = cycle
        self._initial_cycles[idx] = cycle
        return id

    def connect(self, src, dst, weight=1.0, delayed=False):
        if self._frozen:
            raise CircuitError("circuit is finalized; cannot add edges")
        for n in (src, dst):
            if n not in self._index:
                raise CircuitError(f"unknown node {n!r}")
        self.edges.append(Edge(src, dst, float(weight), bool(delayed)))

    def set_delay(self, id, value):
        """Set the value a delayed out-edge of ``id`` delivers (initially and after :meth:`reset`)."""
        idx = self._idx(id)
        self._initial_delay[idx] = value
        if self._frozen:
            if idx not in self._held:
                raise CircuitError(f"node {id!r} has no delayed out-edge")
            self._held[idx] = value

    def feed(self, id, value):
        idx = self._idx(id)
        if self._nodes[idx].kind is not NodeKind.INPUT:
            raise CircuitError(f"node {id!r} is not an input")
        self._feeds[idx] = value

    def finalize(self):
        """Validate wiring and compute the schedule.  Idempotent."""
        if self._frozen:
            return self
        for node in self._nodes:
            node.inputs = []
        for e in self.edges:
            self._nodes[self._index[e.dst]].inputs.append(
                (self._index[e.src], e.delayed, e.weight)
            )
        for node in self._nodes:
            n_in = len(node.inputs)
            if node.kind in (NodeKind.SUM, NodeKind.PRODUCT) and n_in < 1:
                raise CircuitError(f"{node.kind.value} node {node.id!r} has no inputs")
            if node.kind in (NodeKind.OUTPUT, NodeKind.SUBGRAPH) and n_in != 1:
                raise CircuitError(
                    f"{node.kind.value} node {node.id!r} needs exactly one input, has {n_in}"
                )
            if node.kind in (NodeKind.CONSTANT, NodeKind.INPUT, NodeKind.GATE) and n_in:
                raise CircuitError(f"{node.kind.value} node {node.id!r} cannot have inputs")
        self.schedule = self._topological_order()
        self._delay_sources = sorted({self._index[e.src] for e in self.edges if e.delayed})
        for idx in self._initial_delay:
            if idx not in self._delay_sources:
                raise CircuitError(
                    f"initial delay set on {self._nodes[idx].id!r}, which has no delayed out-edge"
                )
        self._frozen = True
        self.reset()
        return self

    def _topological_order(self):
        n = len(self._nodes)
        indeg = [0] * n
        succ = [[] for _ in range(n)]
        for e in self.edges:
            if not e.delayed:
                s, d = self._index[e.src], self._index[e.dst]
                succ[s].append(d)
                indeg[d] += 1
        ready = [i for i in range(n) if indeg[i] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            i = heapq.heappop(ready)
            order.append(i)
            for d in succ[i]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    heapq.heappush(ready, d)
        if len(order) != n:
            stuck = [self._nodes[i].id for i in range(n) if indeg[i] > 0]
            raise CircuitError(f"delay-free cycle through nodes {stuck}")
        return order

    # -- state ------------------------------------------------------------

    def reset(self):
        """Restore initial delay values and cycle positions; forget node values."""
        self._require_frozen()
        self._held = {i: self._initial_delay.get(i, 0.0) for i in self._delay_sources}
        self._cycles = dict(self._initial_cycles)
        self._values = [_NOT_EVALUATED] * len(self._nodes)
        self.micro_index = 0
        return self

    def _require_frozen(self):
        if not self._frozen:
            raise CircuitError("circuit is not finalized")

    def _idx(self, id):
        try:
            return self._index[id]
        except KeyError:
            raise CircuitError(f"unknown node {id!r}") from None

    @property
    def node_ids(self):
        return [n.id for n in self._nodes]

    def kind(self, id) -> NodeKind:
        return self._nodes[self._idx(id)].kind

    def census(self) -> dict[NodeKind, int]:
        """Number of nodes of each kind."""
        out = {k: 0 for k in NodeKind}
        for n in self._nodes:
            out[n.kind] += 1
        return out

    def cycle(self, gate_id):
        return self._cycles[self._idx(gate_id)]

    @property
    def cycles(self) -> dict[str, Any]:
        return {self._nodes[i].id: c for i, c in self._cycles.items()}

    def replace_cycle(self, gate_id, cycle):
        """Swap the coefficient cycle feeding a gate (also its reset state)."""
        idx = self._idx(gate_id)
        if self._nodes[idx].kind is not NodeKind.GATE:
            raise CircuitError(f"node {gate_id!r} is not a gate")
        self._cycles[idx] = cycle
        self._initial_cycles[idx] = cycle.reset()

    def held(self, id):
        """Value currently delivered by delayed out-edges of ``id``."""
        self._require_frozen()
        idx = self._idx(id)
        if idx not in self._held:
            raise CircuitError(f"node {id!r} has no delayed out-edge")
        return self._held[idx]

    @property
    def delay_state(self) -> dict[str, Any]:
        self._require_frozen()
        return {self._nodes[i].id: v for i, v in self._held.items()}

    def read_node(self, id):
        """Value of ``id`` from the most recent micro-step."""
        idx = self._idx(id)
        node = self._nodes[idx]
        value = self._values[idx] if self._frozen else _NOT_EVALUATED
        if value is _NOT_EVALUATED:
            if node.kind is NodeKind.CONSTANT:
                return node.value
            if node.kind is NodeKind.GATE:
                return self._cycles[idx].read()
            raise CircuitError(f"node {id!r} has not been evaluated yet")
        return value

    # -- execution --------------------------------------------------------

    def _compute(self, node: _Node, idx: int, vals):
        kind = node.kind
        if kind is NodeKind.CONSTANT:
            return node.value
        if kind is NodeKind.GATE:
            return self._cycles[idx].read()
        if kind is NodeKind.INPUT:
            try:
                return self._feeds[idx]
            except KeyError:
                raise CircuitError(f"input node {node.id!r} was not fed") from None
        held = self._held
        acc = None
        if kind is NodeKind.SUM:
            ndim = node.ndim
            for src, delayed, w in node.inputs:
                v = held[src] if delayed else vals[src]
                if w != 1.0:
                    v = w * v
                if ndim is not None and np.ndim(v) > ndim:
                    for row in v:
                        acc = row if acc is None else acc + row
                else:
                    acc = v if acc is None else acc + v
            return 0.0 if acc is None else acc
        if kind is NodeKind.PRODUCT:
            for src, delayed, w in node.inputs:
                v = held[src] if delayed else vals[src]
                if w != 1.0:
                    v = w * v
                acc = v if acc is None else acc * v
            return acc
        src, delayed, w = node.inputs[0]
        v = held[src] if delayed else vals[src]
        if w != 1.0:
            v = w * v
        if kind is NodeKind.SUBGRAPH:
            return node.net.evaluate(v)
        return v  # OUTPUT

    def micro_step(self):
        """Evaluate all nodes once, commit delays, rotate cycles.  Returns ``self``."""
        self.finalize()
        vals = self._values
        nodes = self._nodes
        for idx in self.schedule:
            node = nodes[idx]
            v = self._compute(node, idx, vals)
            if not _finite(v):
                raise NonFiniteError(node.id, self.micro_index)
            vals[idx] = v
        if self.trace is not None:
            for idx in self.schedule:
                self.trace.append((self.micro_index, nodes[idx].id, nodes[idx].kind.value, vals[idx]))
        for idx in self._delay_sources:
            self._held[idx] = vals[idx]
        for idx, cyc in self._cycles.items():
            self._cycles[idx] = cyc.rotated()
        self.micro_index += 1
        return self

    def evaluate(self, feeds: dict) -> dict[str, Any]:
        """One pass over a delay-free circuit; returns ``{output id: value}``.

        No finiteness checks and no state is committed, so this is the fast
        path used for embedded subgraphs.
        """
        self.finalize()
        vals = [None] * len(self._nodes)
        saved = self._feeds
        self._feeds = {self._index[k]: v for k, v in feeds.items()}
        try:
            for idx in self.schedule:
                vals[idx] = self._compute(self._nodes[idx], idx, vals)
        finally:
            self._feeds = saved
        return {
            n.id: vals[i] for i, n in enumerate(self._nodes) if n.kind is NodeKind.OUTPUT
        }

    # -- tracing / export ---------------------------------------------------

    def enable_trace(self):
        self.trace = []
        return self

    def write_trace_csv(self, path):
        if self.trace is None:
            raise CircuitError("tracing was not enabled")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["micro", "node", "kind", "value"])
            for micro, node, kind, value in self.trace:
                w.writerow([micro, node, kind, _format_value(value)])

    def to_dot(self, title=None) -> str:
        """Graphviz DOT text: delayed edges dashed, gates annotated with their cycles."""
        lines = [f'digraph "{title or self.name}" {{', "  rankdir=LR;"]
        for i, n in enumerate(self._nodes):
            lines.append(f"  n{i} [{_dot_attrs(n, self._cycles.get(i))}];")
        for e in self.edges:
            attrs = []
            if e.weight != 1.0:
                attrs.append(f'label="{e.weight:g}"')
            if e.delayed:
                attrs.append("style=dashed")
            attr = f" [{', '.join(attrs)}]" if attrs else ""
            lines.append(f"  n{self._index[e.src]} -> n{self._index[e.dst]}{attr};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _finite(v) -> bool:
    if isinstance(v, float):
        return math.isfinite(v)
    return bool(np.isfinite(v).all())


def _format_value(v):
    if np.ndim(v) == 0:
        return repr(float(v))
    return " ".join(repr(float(x)) for x in np.ravel(v))


_SHAPES = {
    NodeKind.SUM: ("circle", "+"),
    NodeKind.PRODUCT: ("circle", "×"),
    NodeKind.CONSTANT: ("circle", None),
    NodeKind.INPUT: ("circle", None),
    NodeKind.OUTPUT: ("diamond", None),
    NodeKind.SUBGRAPH: ("box", "f_NN"),
    NodeKind.GATE: ("circle", None),
}


def _dot_attrs(node: _Node, cycle) -> str:
    shape, symbol = _SHAPES[node.kind]
    text = node.label or node.id
    if symbol:
        text = f"{symbol}\\n{text}"
    if node.kind is NodeKind.CONSTANT:
        text = f"{text}\\n= {_format_value(node.value)}"
    if cycle is not None:
        seq = ", ".join(_format_value(v) for v in cycle.values)
        text = f"{text}\\ncycle [{seq}]"
    attrs = [f'label="{text}"', f"shape={shape}"]
    if node.kind in (NodeKind.CONSTANT, NodeKind.GATE):
        attrs.append('style=filled, fillcolor=black, fontcolor=white')
    if node.kind is NodeKind.INPUT:
        attrs.append("style=dashed")
    return ", ".join(attrs)
