"""Exception hierarchy.

Every error raised by the library derives from :class:`GeoSteinError`, so the
CLI can map computation failures to exit code 1 with a single ``except``.
Configuration problems derive from :class:`ConfigError` instead (exit code 2).
"""


class GeoSteinError(Exception):
    """Base class for computation errors."""


# geometry
class ConstraintViolation(GeoSteinError):
    pass


class OutOfSupport(GeoSteinError):
    pass


class MixedManifolds(GeoSteinError):
    pass


class CutLocus(GeoSteinError):
    pass


class AtPole(GeoSteinError):
    pass


class NotOnBoundary(GeoSteinError):
    pass


# measures
class SingularPoint(GeoSteinError):
    pass


class UnsupportedManifold(GeoSteinError):
    pass


class UnsupportedFamily(GeoSteinError):
    pass


# operator
class SupportBoundary(GeoSteinError):
    pass


class EmptySample(GeoSteinError):
    pass


# ksd
class TooFewSamples(GeoSteinError):
    pass


class InvalidLevel(GeoSteinError):
    pass


# spectral
class SingularNode(GeoSteinError):
    pass


class IllSeparatedSpectrum(GeoSteinError):
    pass


class DegenerateKernel(GeoSteinError):
    pass


class SolverFailure(GeoSteinError):
    pass


class ZeroGradient(GeoSteinError):
    pass


# sampling
class NeverAccepted(GeoSteinError):
    pass


class LengthMismatch(GeoSteinError):
    pass


class TooShort(GeoSteinError):
    pass


class ConfigError(Exception):
    """Base class for configuration errors.

    ``pointer`` is a JSON pointer to the offending location in the config.
    """

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class SchemaError(ConfigError):
    pass


class UnknownField(ConfigError):
    pass
