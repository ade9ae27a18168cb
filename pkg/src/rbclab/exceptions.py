class RBCError(Exception):
    """Base class for errors raised by rbclab."""


class ImpossibleOutcomeError(RBCError, ValueError):
    """A forced measurement outcome has zero Born probability."""


class MeasureMismatchError(RBCError, ValueError):
    """A magic measure was evaluated on a phase it is not defined for."""


class ConfigError(RBCError, ValueError):
    """Invalid run configuration or circuit parameters."""


class SchemeModeError(ConfigError):
    """Parity mode was requested with an angle scheme that does not allow it."""


class CollapseError(RBCError, ValueError):
    """Finite-size-scaling data cannot be collapsed (e.g. no x overlap)."""
