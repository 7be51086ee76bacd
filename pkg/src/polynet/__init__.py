"""Exact PolyNet circuits for polynomial ODEs and neural integrators built from them."""

__version__ = "0.1.0"

from .circuit import Circuit, CoefficientCycle, NodeKind, ShiftRegisterCycle, shift_rotate
from .compiler import PolyNet, compile_polynet, polynet_eval
from .errors import (
    BlowUpError,
    CircuitError,
    NonFiniteError,
    PolynetError,
    SeedingError,
    SpecError,
)
from .integrators import (
    AbmCircuit,
    ButcherTableau,
    RkCircuit,
    build_abm2,
    build_rk4,
    build_rk_general,
    integrate,
    tableau_preset,
)
from .polyode import (
    Monomial,
    PolynomialSystem,
    Term,
    eval_derivative,
    lorenz63,
    monomial_count,
    parse_system,
)
from .reference import (
    classical_abm2_step,
    classical_integrate,
    classical_rk_step,
    divergence,
    perturbation_experiment,
)
from .trajectory import DivergenceSeries, Trajectory
