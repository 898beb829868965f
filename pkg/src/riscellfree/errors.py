"""Exception hierarchy shared by all modules."""


class RisCellFreeError(ValueError):
    """Base class for invalid inputs detected by the library."""


class InvalidGeometryError(RisCellFreeError):
    pass


class InvalidParameterError(RisCellFreeError):
    pass


class NotPSDError(RisCellFreeError):
    pass


class InvalidPhaseError(RisCellFreeError):
    pass


class ShapeError(RisCellFreeError):
    pass


class InvalidPowerError(RisCellFreeError):
    """Raised when downlink power coefficients violate the per-AP budget."""


class SizeError(RisCellFreeError):
    """Raised when an exhaustive search would be too large."""


class ConfigError(RisCellFreeError):
    """Schema violation in a configuration file.

    ``path`` is the dotted field path of the offending entry.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
