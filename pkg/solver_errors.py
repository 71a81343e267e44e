"""
Exception hierarchy shared by the solver modules and the CLI
"""


class SolverError(Exception):
    """Base class for every failure raised by the solver"""


class ConfigurationError(SolverError):
    """Invalid market parameters, grid, node distribution or run settings"""


class SingularSystemError(SolverError):
    """A moment system for stencil weights has no unique solution"""


class SchemeCancellationError(SolverError):
    """The farthest node of a difference scheme failed to cancel"""

    def __init__(self, residual: float):
        super().__init__(f"gamma_5 weight did not cancel (|w5| = {residual:.3e})")
        self.residual = residual


class NegativeDiscriminant(SolverError):
    """The boundary-velocity quadratic has no real root at this state"""

    def __init__(self, discriminant: float, scale: float):
        super().__init__(f"discriminant {discriminant:.6e} below threshold (a1^2 = {scale:.6e})")
        self.discriminant = discriminant
        self.scale = scale


class MaxRejectsError(SolverError):
    """Adaptive stepping rejected too many consecutive steps"""

    def __init__(self, tau: float, k: float, rejects: int):
        super().__init__(f"{rejects} consecutive rejections at tau={tau:.6e} (last k={k:.3e})")
        self.tau = tau
        self.k = k
        self.rejects = rejects


class NonFiniteStateError(SolverError):
    """NaN or infinity appeared in a state vector or an operator input"""
