"""Exception types shared across the library.

Exit-code mapping for the command line lives in cli.py: config problems
map to 2, solver non-convergence to 3, internal inconsistencies to 4.
"""


class ManovaSpecError(Exception):
    """Base class for all library errors."""


class ConfigError(ManovaSpecError):
    """Invalid configuration, dimensions, or input file."""


class NonConvergenceError(ManovaSpecError):
    """Fixed-point iteration did not reach tolerance.

    Carries the spectral argument and the last residual so callers can
    re-enter with a finer grid or a different warm start.
    """

    def __init__(self, z, residual, iterations, message=None):
        self.z = z
        self.residual = residual
        self.iterations = iterations
        msg = message or (
            f"fixed point did not converge at z={z!r}: "
            f"residual={residual:.3e} after {iterations} iterations"
        )
        super().__init__(msg)


class SingularSystemError(ManovaSpecError):
    """A linear system in the fixed-point iteration was singular.

    Off the spectral support these systems are provably invertible, so a
    singular factorization signals an argument inside or very near the
    support.
    """

    def __init__(self, z, message=None):
        self.z = z
        super().__init__(message or f"singular linear system at z={z!r} (inside/near support?)")


class MultiplicityError(ManovaSpecError):
    """Kernel dimension of the outlier matrix is not 1 (degenerate root)."""


class InconsistencyError(ManovaSpecError):
    """An internal sanity check failed (e.g. alpha <= 0 at a simple root)."""
