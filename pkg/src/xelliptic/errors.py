"""Exception hierarchy shared by all modules."""


class XEllipticError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(XEllipticError):
    """Malformed scenario, shape tree, or violated precondition."""


class GeometryError(XEllipticError):
    """Inconsistent domain geometry (empty obstacle, no approach direction)."""


class RadiusError(GeometryError):
    """A metric ball leaves the host domain or the bounding box."""


class XEllipticityViolation(XEllipticError):
    """The coefficient matrix charges a direction the fields do not span."""


class AssemblyError(XEllipticError):
    """Non-symmetric coefficient evaluation during assembly."""


class MisuseError(XEllipticError):
    """An operation was called on inputs that break its contract."""


class NumericalError(XEllipticError):
    """Solver stagnation or truncated balls; maps to CLI exit status 2."""


class SolverStagnation(NumericalError):
    def __init__(self, message, floating_nodes=None, residual=None):
        super().__init__(message)
        self.floating_nodes = floating_nodes
        self.residual = residual
