"""Exception hierarchy shared by every engine."""


class WishartDensityError(Exception):
    """Base class for all package errors."""


class DomainError(WishartDensityError, ValueError):
    pass


class ConfigError(WishartDensityError, ValueError):
    """Invalid run configuration; ``key_path`` names the offending entry."""

    def __init__(self, key_path, message):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class InvalidLaw(WishartDensityError, ValueError):
    pass


class EvaluationError(WishartDensityError, ArithmeticError):
    def __init__(self, node, message="integrand is not finite"):
        self.node = node
        super().__init__(f"{message} at node {node!r}")


class NonFiniteIterate(WishartDensityError, ArithmeticError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"fixed-point map produced a non-finite value at iteration {iteration}")


class NonConvergence(WishartDensityError, RuntimeError):
    """Iteration budget exhausted; the best iterate is kept on the exception."""

    def __init__(self, best, residual, iterations):
        self.best = best
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )


class SingularDenominator(WishartDensityError, ZeroDivisionError):
    pass


class SingularShift(WishartDensityError, ArithmeticError):
    pass


class NegativeDensity(WishartDensityError, ArithmeticError):
    pass


class InsufficientGrid(WishartDensityError, ValueError):
    pass


class NoSupportDetected(WishartDensityError, ValueError):
    pass
