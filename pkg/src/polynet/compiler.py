"""Compile a polynomial system into an exact three-layer PolyNet.

Layout of the realized circuit:

* one input node per state variable,
* one product node per distinct monomial of degree >= 2, shared by every
  output that uses it, fed by ``d_j`` unit-weight edges from input ``j``,
* one additive output node per state variable whose in-edges are, in
  order: the bias, the direct linear edges (ascending input index), then
  the weighted product-node edges (canonical monomial order).

That edge order is the canonical term order of the source system, so
evaluating the circuit reproduces :func:`~polynet.polyode.eval_derivative`
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit
from .polyode import Monomial, PolynomialSystem, as_state, hidden_node_bound


@dataclass(frozen=True, eq=False)
class PolyNet:
    n_inputs: int
    hidden_nodes: tuple[Monomial, ...]
    output_biases: np.ndarray
    linear_weights: np.ndarray
    hidden_weights: dict[tuple[int, int], float]
    circuit: Circuit
    system: PolynomialSystem

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_nodes)

    @property
    def hidden_bound(self) -> int:
        return hidden_node_bound(self.n_inputs, self.system.max_degree)

    def input_ids(self):
        return [f"x{j + 1}" for j in range(self.n_inputs)]

    def output_ids(self):
        return [f"out{n + 1}" for n in range(self.n_inputs)]

    def evaluate(self, x):
        """Feed ``x`` (shape ``(..., N)``) through the realized circuit."""
        feeds = {f"x{j + 1}": x[..., j] for j in range(self.n_inputs)}
        outs = self.circuit.evaluate(feeds)
        batch = np.shape(x)[:-1]
        if not batch:
            return np.array([outs[f"out{n + 1}"] for n in range(self.n_inputs)], dtype=np.float64)
        return np.stack(
            [np.broadcast_to(outs[f"out{n + 1}"], batch) for n in range(self.n_inputs)],
            axis=-1,
        )

    def stats(self) -> dict:
        return {
            "n_vars": self.n_inputs,
            "max_degree": self.system.max_degree,
            "terms": len(self.system.terms),
            "hidden_nodes": self.n_hidden,
            "bound": self.hidden_bound,
            "linear_edges": int(np.count_nonzero(self.linear_weights)),
            "hidden_edges": len(self.hidden_weights),
        }

    def to_dot(self) -> str:
        return self.circuit.to_dot("PolyNet")


def compile_polynet(sys: PolynomialSystem) -> PolyNet:
    """Build the PolyNet for ``sys``.

    Zero-free biases become output biases, degree-1 terms become direct
    input-to-output edges, and each distinct higher-degree monomial becomes
    one shared product node.

    >>> from polynet.polyode import lorenz63
    >>> net = compile_polynet(lorenz63())
    >>> [str(m) for m in net.hidden_nodes]
    ['x1*x2', 'x1*x3']
    """
    N = sys.n_vars
    biases = np.zeros(N)
    linear = np.zeros((N, N))
    hidden: list[Monomial] = sorted(
        {t.monomial for t in sys.terms if t.monomial.degree >= 2}, key=Monomial.sort_key
    )
    hidden_index = {m: i for i, m in enumerate(hidden)}
    hidden_weights: dict[tuple[int, int], float] = {}

    c = Circuit("polynet")
    for j in range(N):
        c.add_input(f"x{j + 1}")
    for i, m in enumerate(hidden):
        hid = c.add_product(f"h{i + 1}", label=str(m))
        for j in m.indices:
            c.connect(f"x{j + 1}", hid)
    for n in range(N):
        node = c.add_sum(f"dx{n + 1}")
        terms = sys.terms_for(n)
        if not terms:
            c.add_constant(f"b{n + 1}", 0.0, label=f"bias{n + 1}")
            c.connect(f"b{n + 1}", node)
        for t in terms:
            mono = t.monomial
            if mono.degree == 0:
                biases[n] = t.coeff
                c.add_constant(f"b{n + 1}", t.coeff, label=f"bias{n + 1}")
                c.connect(f"b{n + 1}", node)
            elif mono.degree == 1:
                (j,) = mono.indices
                linear[n, j] = t.coeff
                c.connect(f"x{j + 1}", node, weight=t.coeff)
            else:
                i = hidden_index[mono]
                hidden_weights[(n, i)] = t.coeff
                c.connect(f"h{i + 1}", node, weight=t.coeff)
        c.add_output(f"out{n + 1}")
        c.connect(node, f"out{n + 1}")
    c.finalize()

    biases.setflags(write=False)
    linear.setflags(write=False)
    return PolyNet(
        n_inputs=N,
        hidden_nodes=tuple(hidden),
        output_biases=biases,
        linear_weights=linear,
        hidden_weights=hidden_weights,
        circuit=c,
        system=sys,
    )


def polynet_eval(net: PolyNet, x) -> np.ndarray:
    """Evaluate the PolyNet at ``x`` (a state or a batch of states)."""
    return net.evaluate(as_state(x, net.n_inputs))
