class ConfigError(ValueError):
    """An invalid configuration value or combination of values."""
