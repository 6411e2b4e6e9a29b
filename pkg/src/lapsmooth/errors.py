"""Exception types shared across the package."""


class DimensionError(ValueError):
    """A vector's length does not match the operator or model dimension."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class DataFormatError(ValueError):
    """A data file could not be parsed (bad magic, truncation, overflow)."""


class PrivacyConditionError(RuntimeError):
    """The noise calibration's validity conditions do not hold."""
