"""Exception types shared across the simulator."""


class TargetLostError(RuntimeError):
    """The live segmentation of the target is empty; the episode cannot continue."""


class EstimatorUnavailableError(RuntimeError):
    """An external estimator did not answer within its timeout."""


class ProtocolError(RuntimeError):
    """An external estimator sent a malformed or invariant-violating response."""


class ConfigError(ValueError):
    """Invalid experiment or randomization configuration."""
