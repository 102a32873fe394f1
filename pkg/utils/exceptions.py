"""Error hierarchy shared by every flowforge app."""


class FlowforgeError(Exception):
    """Base class for errors raised by flowforge"""
    pass


class ConfigurationError(FlowforgeError, ValueError):
    """Invalid configuration value or combination of values"""
    pass


class ShapeError(FlowforgeError, ValueError):
    """Tensor shapes do not line up"""
    pass


class ContractError(FlowforgeError, ValueError):
    """A documented precondition of an operation was violated"""
    pass


class DomainError(FlowforgeError, ValueError):
    """A scalar argument lies outside its domain"""
    pass
