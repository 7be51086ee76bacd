"""Location-aware loading of small YAML/JSON description files.

Values are returned together with their source position so validation
errors can point at the offending line and column.
"""

import math

import yaml

from .errors import SpecError

_constructor = yaml.constructor.SafeConstructor()


class Doc:
    """A composed YAML node plus the source name, with typed accessors."""

    def __init__(self, node, source=None):
        self.node = node
        self.source = source

    @classmethod
    def parse(cls, text, source=None):
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark or exc.context_mark
            line = mark.line + 1 if mark else None
            col = mark.column + 1 if mark else None
            raise SpecError(exc.problem or str(exc), line, col, source) from None
        if node is None:
            raise SpecError("empty document", 1, 1, source)
        return cls(node, source)

    def error(self, message):
        mark = self.node.start_mark
        return SpecError(message, mark.line + 1, mark.column + 1, self.source)

    def _child(self, node):
        return Doc(node, self.source)

    def mapping(self, required=(), optional=()):
        """Return ``{key: Doc}``, rejecting unknown and missing keys."""
        if not isinstance(self.node, yaml.MappingNode):
            raise self.error("expected a mapping")
        allowed = set(required) | set(optional)
        out = {}
        for knode, vnode in self.node.value:
            key = knode.value
            if key not in allowed:
                raise Doc(knode, self.source).error(f"unknown field {key!r}")
            if key in out:
                raise Doc(knode, self.source).error(f"duplicate field {key!r}")
            out[key] = self._child(vnode)
        for key in required:
            if key not in out:
                raise self.error(f"missing required field {key!r}")
        return out

    def sequence(self):
        if not isinstance(self.node, yaml.SequenceNode):
            raise self.error("expected a list")
        return [self._child(n) for n in self.node.value]

    def scalar(self):
        if not isinstance(self.node, yaml.ScalarNode):
            raise self.error("expected a scalar")
        return _constructor.construct_object(self.node)

    def integer(self, minimum=None):
        value = self.scalar()
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(f"expected an integer >= {minimum}, got {value}")
        return value

    def real(self):
        value = self.scalar()
        if isinstance(value, bool):
            raise self.error(f"expected a number, got {value!r}")
        if isinstance(value, str):
            # YAML 1.1 does not resolve "1e-15" as a float
            try:
                value = float(value)
            except ValueError:
                raise self.error(f"expected a number, got {value!r}") from None
        if not isinstance(value, (int, float)):
            raise self.error(f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise self.error("number must be finite")
        return value

    def string(self):
        value = self.scalar()
        if not isinstance(value, str):
            raise self.error(f"expected a string, got {value!r}")
        return value
