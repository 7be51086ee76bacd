"""Exception hierarchy shared by the polynet modules."""


class PolynetError(Exception):
    """Base class for all errors raised by this package."""


class SpecError(PolynetError, ValueError):
    """A system or tableau description could not be parsed or validated.

    ``line`` and ``column`` are 1-based when the location is known.
    """

    def __init__(self, message, line=None, column=None, source=None):
        self.line = line
        self.column = column
        self.source = source
        where = ""
        if line is not None:
            where = f"{source or '<input>'}:{line}:{column}: "
        super().__init__(where + message)
        self.message = message


class CircuitError(PolynetError):
    """Structural problem with a circuit (bad wiring, unknown node, delay-free cycle)."""


class NonFiniteError(PolynetError, ArithmeticError):
    """A node produced NaN or Inf during a micro-step."""

    def __init__(self, node_id, micro_index):
        self.node_id = node_id
        self.micro_index = micro_index
        super().__init__(
            f"non-finite value at node {node_id!r} on micro-step {micro_index}"
        )


class SeedingError(PolynetError):
    """A multistep circuit was stepped before its start-up states were loaded."""


class BlowUpError(PolynetError, ArithmeticError):
    """Integration produced a non-finite state.

    ``trajectory`` holds every state computed before the failing step.
    """

    def __init__(self, step, trajectory, cause=None):
        self.step = step
        self.trajectory = trajectory
        self.cause = cause
        msg = f"integration blew up at step {step}"
        if cause is not None:
            msg += f" ({cause})"
        super().__init__(msg)
