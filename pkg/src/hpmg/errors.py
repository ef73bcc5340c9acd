"""Exception hierarchy.

Every error raised deliberately by the library derives from `HpmgError`
so callers (the CLI in particular) can separate configuration/engine
failures from programming bugs.
"""


class HpmgError(Exception):
    pass


class InvalidOrderError(HpmgError, ValueError):
    pass


class DegenerateBasisError(HpmgError, ValueError):
    pass


class InvalidMeshError(HpmgError, ValueError):
    pass


class DegenerateGeometryError(HpmgError, ValueError):
    pass


class CannotCoarsenError(HpmgError, ValueError):
    pass


class ConfigurationError(HpmgError, ValueError):
    pass


class ShapeError(HpmgError, ValueError):
    pass


class AssemblyTooLargeError(HpmgError, MemoryError):
    pass


class ElementTooLargeError(HpmgError, MemoryError):
    pass


class RequiresAssemblyError(HpmgError):
    pass


class RequiresElementMatricesError(HpmgError):
    pass


class HierarchyDepthError(HpmgError, ValueError):
    pass


class FactorizationError(HpmgError):
    pass


class BreakdownError(HpmgError, ArithmeticError):
    """CG detected a non-positive curvature ``(p, Ap) <= 0``."""

    def __init__(self, iteration, curvature):
        self.iteration = iteration
        self.curvature = curvature
        super().__init__(f"CG breakdown at iteration {iteration}: (p, Ap) = {curvature:.3e}")


class SeedError(HpmgError, ValueError):
    pass


class BudgetExceededError(HpmgError, MemoryError):
    pass


class AsymmetricMatrixError(HpmgError, ValueError):
    pass
