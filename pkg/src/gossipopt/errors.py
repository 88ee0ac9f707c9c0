"""Exception hierarchy shared across the package."""


class GossipOptError(Exception):
    """Base class for all errors raised by gossipopt."""


class ParameterError(GossipOptError, ValueError):
    """Invalid user-supplied parameter."""


class GossipMatrixError(GossipOptError):
    """A matrix violates one of the gossip-matrix conditions."""


class ConvergenceError(GossipOptError):
    """An inner solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DivergenceError(GossipOptError):
    """A solver's error blew past the divergence threshold."""

    def __init__(self, message, parameters=None):
        super().__init__(message)
        self.parameters = dict(parameters or {})


class ConfigError(GossipOptError, ValueError):
    """Malformed experiment configuration."""


class SupportViolation(GossipOptError):
    """A node's memory reached coordinates faster than communication allows."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])
