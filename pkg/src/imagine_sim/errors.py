"""Exception hierarchy for the simulator."""


class SimError(Exception):
    """Base class for all simulator errors."""


class UsageError(SimError):
    """An operation was called with arguments violating its contract."""


class ConfigError(SimError):
    """A configuration value is out of the supported range."""


class SequencingError(SimError):
    """A phase was entered out of order (e.g. accumulate during DP)."""


class CapacityError(SimError):
    """A buffer or memory would overflow; carries the required size."""

    def __init__(self, msg: str, required_bits: int = 0):
        super().__init__(msg)
        self.required_bits = required_bits


class UnmappableError(SimError):
    """A layer cannot be placed onto the macro geometry."""


class BundleError(SimError):
    """A model bundle file is malformed or violates an invariant."""
