"""Exception types shared across the package."""


class FtlMacroError(Exception):
    """Base class for all package errors."""


class DomainError(FtlMacroError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigurationError(FtlMacroError, ValueError):
    """A run configuration is inconsistent (step bounds, window sizes, CFL)."""


class FluxConstructionError(ConfigurationError):
    """The effective velocity table cannot be built for this distribution."""


class ConfigFileError(FtlMacroError, ValueError):
    """A scenario configuration file failed to parse or validate."""
