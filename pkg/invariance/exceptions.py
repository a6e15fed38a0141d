class RinvError(Exception):
    """Base class for every error raised by the invariance package."""


class DimensionError(RinvError):
    pass


class ContractError(RinvError):
    pass


class DomainError(RinvError):
    """Monomials need strictly positive inputs."""


class NonFiniteError(RinvError):
    """A kernel produced NaN/Inf from finite inputs (only raised with finite checks on)."""


class FormatError(RinvError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(RinvError):
    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class BuildError(RinvError):
    def __init__(self, message, layers=None):
        if layers:
            message = f"{layers[0]} -> {layers[1]}: {message}"
        super().__init__(message)
        self.layers = layers


class NumericalAbort(RinvError):
    def __init__(self, message, checkpoint=None):
        if checkpoint:
            message = f"{message}; last good checkpoint: {checkpoint}"
        super().__init__(message)
        self.checkpoint = checkpoint
