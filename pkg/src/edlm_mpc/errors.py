"""Exception hierarchy shared by every module of the package."""


class EdlmMpcError(Exception):
    """Base class for all errors raised by ``edlm_mpc``."""


class DimensionMismatch(EdlmMpcError, ValueError):
    pass


class SingularMatrix(EdlmMpcError):
    pass


class DegenerateZeroPolynomial(EdlmMpcError, ValueError):
    pass


class DivergentLimit(EdlmMpcError):
    """A final-value limit does not exist (uncancelled pole at z = 1)."""


class UnstablePole(EdlmMpcError):
    """A transfer function has a pole outside the unit circle."""


class InsufficientHistory(EdlmMpcError, ValueError):
    pass


class MissingExactForm(EdlmMpcError):
    """The plant does not provide an analytic pseudo Jacobi matrix."""


class SingularNormalMatrix(EdlmMpcError):
    pass


class InfeasibleConstraints(EdlmMpcError):
    pass


class NotConverged(EdlmMpcError):
    """Iterative solver stopped at its iteration cap.

    The last iterate and its gradient-mapping norm are attached so callers
    can decide whether to use them.
    """

    def __init__(self, message, iterate=None, grad_norm=None):
        super().__init__(message)
        self.iterate = iterate
        self.grad_norm = grad_norm


class NotSISO(EdlmMpcError):
    pass


class UnsupportedConfiguration(EdlmMpcError):
    pass


class OutOfRange(EdlmMpcError, ValueError):
    pass


class WindowOutOfRange(EdlmMpcError, ValueError):
    pass


class SimulationDiverged(EdlmMpcError):
    """Closed-loop output exceeded the divergence guard."""

    def __init__(self, message, k=None, trace=None):
        super().__init__(message)
        self.k = k
        self.trace = trace
