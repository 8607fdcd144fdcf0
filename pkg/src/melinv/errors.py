"""
melinv error types
Shared exception hierarchy for the reconstruction library and CLI
"""


class MelInvError(Exception):
    """Base class for melinv errors"""
    pass


class InvalidInputError(MelInvError, ValueError):
    """Input violates an operation's precondition (shape, sign, range)"""
    pass


class ConfigurationError(MelInvError):
    """Invalid run specification, sweep grid or sidecar file"""
    pass


class SolverStateError(MelInvError):
    """Internal solver state is missing or inconsistent"""
    pass


class AudioIOError(MelInvError):
    """Audio or matrix file could not be read or written"""
    pass
