"""Exception hierarchy shared across the package."""


class BandGANError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BandGANError, ValueError):
    """Invalid configuration value or inconsistent settings."""


class ShapeError(BandGANError, ValueError):
    """Tensor or array shapes do not agree with an operation's contract."""


class InputError(BandGANError, ValueError):
    """Malformed input data (audio, features, manifests)."""


class UsageError(BandGANError, RuntimeError):
    """API called in a way its contract does not allow."""


class RoutingError(BandGANError, KeyError):
    """An utterance could not be routed to a generator instance."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""
