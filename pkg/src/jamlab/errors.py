"""Exception types shared across the package.

The CLI maps these onto exit codes: UserError -> 1, data errors
(ParseError, ValidationError, missing files) -> 2, contract/invariant
breaches -> 3.
"""


class JamlabError(Exception):
    pass


class UserError(JamlabError):
    """Bad command-line arguments or configuration."""


class ContractError(JamlabError):
    """A documented precondition or internal invariant was violated."""


class DomainError(ContractError):
    """Argument outside its mathematical domain."""


class ShapeError(ContractError):
    """Incompatible tensor shapes for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(shapes)
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class ParseError(JamlabError):
    """Malformed file content; carries the offending line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class ValidationError(JamlabError):
    """Well-formed file whose content breaks a named invariant."""

    def __init__(self, invariant, message):
        self.invariant = invariant
        super().__init__(f"invariant '{invariant}' violated: {message}")


class DivergenceError(JamlabError):
    """Training produced a non-finite loss."""
