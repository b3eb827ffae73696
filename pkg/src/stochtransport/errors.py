"""Exception hierarchy shared by all modules."""


class TransportLabError(Exception):
    """Base class for every error raised by the package."""


class CatalogError(TransportLabError):
    """A drift or catalog entry produced an invalid (non-finite) value."""


class DomainError(TransportLabError):
    """An argument lies outside the admissible space or time domain."""


class ResolutionError(TransportLabError):
    """A length scale is too small for the grid to resolve."""


class MeshError(TransportLabError):
    """Two objects that must share a mesh or grid do not."""


class RangeError(TransportLabError):
    """A quantity left its representable range (e.g. exponential overflow)."""


class StatError(TransportLabError):
    """A Monte-Carlo budget is too small for the requested statistic."""


class BlowupError(TransportLabError):
    """A characteristic escaped the domain, typically an under-resolved drift."""


class StepSizeError(TransportLabError):
    """The stability restriction leaves no usable time step."""


class RunError(TransportLabError):
    """Too many Monte-Carlo samples failed."""


class ConfigError(TransportLabError):
    """An experiment or model configuration is inconsistent."""


class EllipticError(TransportLabError):
    """The iterative elliptic solver did not converge."""


class ConditionError(TransportLabError):
    """The elliptic coefficient is too close to singular."""
