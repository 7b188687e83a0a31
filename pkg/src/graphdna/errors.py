"""Exception types shared across the package.

Each class carries a short ``kind`` string; the CLI prints it as the
machine-parsable error class and maps it to an exit code.
"""


class GraphDNAError(Exception):
    kind = "error"


class InputError(GraphDNAError, ValueError):
    """Malformed or inconsistent input (files, dimensions, ids)."""

    kind = "input"


class NnzCapError(GraphDNAError, MemoryError):
    """A sparse product would exceed the configured nonzero budget."""

    kind = "nnz-cap"

    def __init__(self, cap, reached, stage=""):
        self.cap = cap
        self.reached = reached
        self.stage = stage
        where = f" while forming {stage}" if stage else ""
        super().__init__(f"nnz {reached} exceeds cap {cap}{where}")


class DivergenceError(GraphDNAError, ArithmeticError):
    """Training objective kept increasing; the solver gave up."""

    kind = "divergence"

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class UndefinedMetricError(GraphDNAError, ValueError):
    kind = "undefined-metric"
