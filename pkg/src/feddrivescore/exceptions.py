"""Exception hierarchy shared by all modules."""


class FedDriveError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(FedDriveError, ValueError):
    pass


class DomainError(FedDriveError, ValueError):
    """An argument is outside the domain an operation is defined on."""


class DataError(FedDriveError, ValueError):
    """Input records are malformed (e.g. non-monotone timestamps)."""


class InsufficientDataError(DataError):
    pass


class DegenerateMetricError(DataError):
    """A metric has zero range or zero variance, so CRITIC weights are undefined."""

    def __init__(self, metric, reason="zero range"):
        self.metric = metric
        super().__init__(f"metric {metric!r} is degenerate ({reason})")


class FitError(FedDriveError, ValueError):
    pass


class NumericalError(FedDriveError, ArithmeticError):
    pass


class PartitionError(FedDriveError, ValueError):
    pass


class DecryptionError(FedDriveError):
    pass


class KeyMismatchError(DecryptionError, DomainError):
    pass


class ProtocolError(FedDriveError):
    pass


class ArbiterUnavailable(ProtocolError):
    pass


class PrivacyViolation(ProtocolError):
    """A message would carry plaintext client data."""


class TrainingError(FedDriveError):
    pass
