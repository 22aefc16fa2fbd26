"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command-line
front end can stay a thin translation layer.
"""


class LinkedCoxError(Exception):
    exit_code = 3


class InvalidInput(LinkedCoxError, ValueError):
    exit_code = 2


class ParseError(InvalidInput):
    """Malformed or invariant-violating CSV content."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class EmptyRiskSet(LinkedCoxError):
    pass


class SingularDesign(LinkedCoxError):
    exit_code = 3


class SeparationDetected(SingularDesign):
    pass


class SingularHessian(SingularDesign):
    pass


class SingularLinkageInfo(SingularDesign):
    pass


class NoConvergence(LinkedCoxError):
    exit_code = 4

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateScenario(LinkedCoxError):
    exit_code = 5
