"""Exception types shared by all modules."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class CFLError(DomainError):
    """The time step breaks the monotonicity (CFL) bound of the explicit scheme."""


class MonotonicityError(DomainError):
    """The diffusion matrix is not diagonally dominant, so the stencil is not monotone."""

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = [] if nodes is None else nodes
