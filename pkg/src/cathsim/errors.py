"""Error types raised across the simulator."""


class CathSimError(Exception):
    """Base class for all simulator errors."""


class ParameterError(CathSimError, ValueError):
    """A parameter value is outside its physical or documented range."""


class PreconditionError(CathSimError, ValueError):
    """An operation was called with inputs violating its contract."""


class SingularSystemError(CathSimError, ArithmeticError):
    """The node-local linear system could not be inverted."""

    def __init__(self, node_index: int, message: str = ""):
        self.node_index = node_index
        super().__init__(message or f"singular system at node {node_index}")


class ConvergenceError(CathSimError, RuntimeError):
    """An iterative solve exhausted its iteration budget."""

    def __init__(self, residual: float, iterations: int, message: str = ""):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            message
            or f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )


class StepError(CathSimError, RuntimeError):
    """A dynamic time step failed; the caller may halve dt and retry."""


class LimitError(CathSimError, ValueError):
    """A commanded value exceeds a hard actuator limit."""


class CalibrationError(CathSimError, RuntimeError):
    """Calibration data is insufficient or inconsistent."""


class ProtocolError(CathSimError, ValueError):
    """A datagram violates the wire protocol (bad magic or version)."""


class FramingError(ProtocolError):
    """A datagram has the wrong length."""


class CorruptionError(ProtocolError):
    """A datagram failed its integrity check."""


class LinkError(CathSimError, RuntimeError):
    """A transport-level failure (timeout, loss beyond threshold)."""


class AbortedRepError(LinkError):
    """A scenario repetition lost too many commands to continue.

    Carries the partial trajectory log collected up to the abort.
    """

    def __init__(self, message: str, partial_log=None):
        self.partial_log = partial_log
        super().__init__(message)


class EmptyInputError(CathSimError, ValueError):
    """An operation that needs at least one element received none."""
