"""Polynomial dynamical systems and their direct evaluation.

A system ``dx/dt = f(x)`` is stored as a canonical, merged list of terms
``coeff * prod_j x_j**d_j``.  :func:`eval_derivative` evaluates it with a
fixed floating-point operation order; every circuit in this package is
built so that it reproduces that order exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from ._document import Doc
from .errors import SpecError

_INT64_MAX = 2**63 - 1


def monomial_count(n_vars: int, max_degree: int) -> int:
    """Number of monomials of degree <= ``max_degree`` in ``n_vars`` variables.

    Equals ``C(n_vars + max_degree, max_degree)``.  Raises ``OverflowError``
    if the count does not fit a signed 64-bit integer.
    """
    if n_vars < 1:
        raise ValueError(f"n_vars must be >= 1, got {n_vars}")
    if max_degree < 0:
        raise ValueError(f"max_degree must be >= 0, got {max_degree}")
    count = math.comb(n_vars + max_degree, max_degree)
    if count > _INT64_MAX:
        raise OverflowError(
            f"monomial count C({n_vars + max_degree}, {max_degree}) exceeds int64"
        )
    return count


def hidden_node_bound(n_vars: int, max_degree: int) -> int:
    """Upper bound on product nodes: all monomials minus constant and linear ones."""
    return max(monomial_count(n_vars, max_degree) - (1 + n_vars), 0)


@dataclass(frozen=True, order=False)
class Monomial:
    """``prod_j x_j**exponents[j]`` with non-negative integer exponents."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in {exps}")
        object.__setattr__(self, "exponents", exps)

    @classmethod
    def from_indices(cls, n_vars: int, indices: Iterable[int]) -> Monomial:
        exps = [0] * n_vars
        for i in indices:
            exps[i] += 1
        return cls(tuple(exps))

    @property
    def n_vars(self) -> int:
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    @property
    def indices(self) -> tuple[int, ...]:
        """Variable indices with multiplicity, ascending (the repeated-multiply order)."""
        return tuple(j for j, e in enumerate(self.exponents) for _ in range(e))

    def sort_key(self):
        return (self.degree, self.indices)

    def __str__(self):
        if self.degree == 0:
            return "1"
        parts = []
        for j, e in enumerate(self.exponents):
            if e == 1:
                parts.append(f"x{j + 1}")
            elif e > 1:
                parts.append(f"x{j + 1}^{e}")
        return "*".join(parts)


@dataclass(frozen=True)
class Term:
    output: int
    coeff: float
    monomial: Monomial

    def __post_init__(self):
        object.__setattr__(self, "coeff", float(self.coeff))
        if not math.isfinite(self.coeff):
            raise ValueError(f"non-finite coefficient {self.coeff}")

    def sort_key(self):
        return (self.output, self.monomial.sort_key())


class PolynomialSystem:
    """An ``n_vars``-dimensional polynomial right-hand side of degree <= ``max_degree``.

    Terms may be given as :class:`Term` objects or ``(output, coeff,
    exponents)`` tuples.  Duplicate ``(output, monomial)`` pairs are summed
    in input order, zero coefficients are dropped, and the result is kept in
    canonical order: ascending output, then ascending degree, then ascending
    variable-index multiset.
    """

    def __init__(self, n_vars: int, max_degree: int, terms: Iterable = ()):
        if isinstance(n_vars, bool) or int(n_vars) != n_vars or n_vars < 1:
            raise ValueError(f"n_vars must be an integer >= 1, got {n_vars!r}")
        if isinstance(max_degree, bool) or int(max_degree) != max_degree or max_degree < 0:
            raise ValueError(f"max_degree must be an integer >= 0, got {max_degree!r}")
        self.n_vars = int(n_vars)
        self.max_degree = int(max_degree)

        merged: dict[tuple[int, Monomial], float] = {}
        for raw in terms:
            term = raw if isinstance(raw, Term) else _term_from_tuple(raw)
            self._check_term(term)
            key = (term.output, term.monomial)
            merged[key] = merged.get(key, 0.0) + term.coeff
        kept = [Term(o, c, m) for (o, m), c in merged.items() if c != 0.0]
        kept.sort(key=Term.sort_key)
        self.terms: tuple[Term, ...] = tuple(kept)

        # (coeff, indices) per output, consumed by eval_derivative
        plan: list[list[tuple[float, tuple[int, ...]]]] = [[] for _ in range(self.n_vars)]
        for t in self.terms:
            plan[t.output].append((t.coeff, t.monomial.indices))
        self._plan = tuple(tuple(p) for p in plan)

    def _check_term(self, term: Term):
        if not 0 <= term.output < self.n_vars:
            raise ValueError(f"output index {term.output} out of range [0, {self.n_vars})")
        if term.monomial.n_vars != self.n_vars:
            raise ValueError(
                f"exponent vector length {term.monomial.n_vars} != n_vars {self.n_vars}"
            )
        if term.monomial.degree > self.max_degree:
            raise ValueError(
                f"monomial {term.monomial} has degree {term.monomial.degree} "
                f"> max_degree {self.max_degree}"
            )

    def __eq__(self, other):
        if not isinstance(other, PolynomialSystem):
            return NotImplemented
        return (self.n_vars, self.max_degree, self.terms) == (
            other.n_vars,
            other.max_degree,
            other.terms,
        )

    def __hash__(self):
        return hash((self.n_vars, self.max_degree, self.terms))

    def __repr__(self):
        return (
            f"PolynomialSystem(n_vars={self.n_vars}, max_degree={self.max_degree}, "
            f"terms={len(self.terms)})"
        )

    def terms_for(self, output: int) -> tuple[Term, ...]:
        return tuple(t for t in self.terms if t.output == output)

    def describe(self) -> str:
        """Human-readable equations, one line per output."""
        lines = []
        for n in range(self.n_vars):
            parts = []
            for t in self.terms_for(n):
                mono = "" if t.monomial.degree == 0 else f"*{t.monomial}"
                parts.append(f"{t.coeff!r}{mono}")
            lines.append(f"dx{n + 1}/dt = " + (" + ".join(parts) if parts else "0"))
        return "\n".join(lines)

    # -- serialization --------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "max_degree": self.max_degree,
            "terms": [
                {"output": t.output, "coeff": t.coeff, "exponents": list(t.monomial.exponents)}
                for t in self.terms
            ],
        }

    def dumps(self) -> str:
        """Serialize to the system file format (YAML flow style, round-trip exact)."""
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def loads(cls, text: str, source: str | None = None) -> PolynomialSystem:
        return parse_system(text, source)

    @classmethod
    def load(cls, path) -> PolynomialSystem:
        path = Path(path)
        return parse_system(path.read_text(), str(path))


def _term_from_tuple(raw) -> Term:
    output, coeff, exponents = raw
    return Term(int(output), float(coeff), Monomial(tuple(exponents)))


def parse_system(text: str, source: str | None = None) -> PolynomialSystem:
    """Parse a system file.

    The format is a YAML (or JSON) mapping::

        n_vars: 3
        max_degree: 2
        terms:
          - {output: 0, coeff: -10.0, exponents: [1, 0, 0]}

    Unknown fields are rejected; errors carry line/column positions.
    """
    doc = Doc.parse(text, source)
    fields = doc.mapping(required=("n_vars", "max_degree", "terms"))
    n_vars = fields["n_vars"].integer(minimum=1)
    max_degree = fields["max_degree"].integer(minimum=0)
    terms = []
    for item in fields["terms"].sequence():
        tf = item.mapping(required=("output", "coeff", "exponents"))
        output = tf["output"].integer(minimum=0)
        if output >= n_vars:
            raise tf["output"].error(f"output index {output} out of range [0, {n_vars})")
        coeff = tf["coeff"].real()
        exps = [e.integer(minimum=0) for e in tf["exponents"].sequence()]
        if len(exps) != n_vars:
            raise tf["exponents"].error(
                f"exponent vector has length {len(exps)}, expected n_vars={n_vars}"
            )
        if sum(exps) > max_degree:
            raise tf["exponents"].error(
                f"monomial degree {sum(exps)} exceeds max_degree={max_degree}"
            )
        terms.append(Term(output, coeff, Monomial(tuple(exps))))
    return PolynomialSystem(n_vars, max_degree, terms)


def as_state(x, n_vars: int | None = None) -> np.ndarray:
    """Validate and convert ``x`` to a float64 array whose last axis is the state."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise ValueError("state must be at least one-dimensional")
    if n_vars is not None and arr.shape[-1] != n_vars:
        raise ValueError(f"state has length {arr.shape[-1]}, expected {n_vars}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state contains non-finite values")
    return arr


def eval_derivative(sys: PolynomialSystem, x) -> np.ndarray:
    """Evaluate ``f(x)`` for a state (or a batch of states along leading axes).

    Each output starts from its first canonical term and adds the rest in
    canonical order; each term is ``coeff * (x_a * x_b * ...)`` with the
    product taken left to right over ascending variable indices.  An output
    with no terms is ``0.0``.
    """
    x = as_state(x, sys.n_vars)
    cols = [x[..., j] for j in range(sys.n_vars)]
    batch = x.shape[:-1]
    outs = []
    for plan in sys._plan:
        acc = None
        for coeff, idx in plan:
            if idx:
                prod = cols[idx[0]]
                for j in idx[1:]:
                    prod = prod * cols[j]
                value = coeff * prod
            else:
                value = coeff
            acc = value if acc is None else acc + value
        outs.append(np.broadcast_to(0.0 if acc is None else acc, batch))
    return np.stack(outs, axis=-1)


def lorenz63(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> PolynomialSystem:
    """The Lorenz-63 system.

    dx1/dt = sigma*x2 - sigma*x1, dx2/dt = rho*x1 - x2 - x1*x3,
    dx3/dt = -beta*x3 + x1*x2.  Zero parameters drop their terms.
    """
    for name, v in (("sigma", sigma), ("rho", rho), ("beta", beta)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    return PolynomialSystem(
        3,
        2,
        [
            (0, -sigma, (1, 0, 0)),
            (0, sigma, (0, 1, 0)),
            (1, rho, (1, 0, 0)),
            (1, -1.0, (0, 1, 0)),
            (1, -1.0, (1, 0, 1)),
            (2, -beta, (0, 0, 1)),
            (2, 1.0, (1, 1, 0)),
        ],
    )


def linear_decay(rate: float = 1.0) -> PolynomialSystem:
    """The scalar test problem ``dx/dt = -rate * x``."""
    return PolynomialSystem(1, 1, [(0, -rate, (1,))])


PRESETS = {
    "lorenz63": lorenz63,
    "decay": linear_decay,
}


def preset(name: str, **params) -> PolynomialSystem:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown system preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)


def random_system(
    rng: np.random.Generator,
    n_vars: int,
    max_degree: int,
    density: float = 0.5,
    coeff_range: Sequence[float] = (-2.0, 2.0),
) -> PolynomialSystem:
    """Random system with each possible (output, monomial) present with probability ``density``."""
    lo, hi = coeff_range
    monos = all_monomials(n_vars, max_degree)
    terms = []
    for n in range(n_vars):
        for m in monos:
            if rng.random() < density:
                terms.append(Term(n, rng.uniform(lo, hi), m))
    return PolynomialSystem(n_vars, max_degree, terms)


def all_monomials(n_vars: int, max_degree: int) -> list[Monomial]:
    """Every monomial of degree <= max_degree, in canonical order."""
    out = []
    for d in range(max_degree + 1):
        for idx in combinations_with_replacement(range(n_vars), d):
            out.append(Monomial.from_indices(n_vars, idx))
    return out
