"""Exception types shared across the package."""


class ColoError(Exception):
    """Base class for anticipated failures; the CLI maps these to exit 1."""


class ShapeError(ColoError):
    """Array arguments have incompatible or invalid shapes."""


class ConfigError(ColoError):
    """Config file could not be parsed or contains unknown keys."""
