"""Exception types raised by the solver.

Every exception carries a machine-readable ``code`` (e.g. ``"BLOWUP"``) and
the name of the module that raised it, so the command line front end can
map failures onto exit codes without string matching.
"""


class SolverError(Exception):
    code = "SOLVER_ERROR"

    def __init__(self, message, code=None, module=None, details=None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.module = module
        self.details = details or {}

    def as_dict(self):
        return {"error": self.code, "module": self.module, "message": str(self)}


class ValidationError(SolverError):
    """A problem specification violates the standing assumptions."""

    code = "REJECT_INDEFINITE"


class NumericalError(SolverError):
    """Integration, regression or simulation failed numerically."""

    code = "NUMERIC_FAILURE"


class OutOfRangeError(SolverError, ValueError):
    code = "OUT_OF_RANGE"
