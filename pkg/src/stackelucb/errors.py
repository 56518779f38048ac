"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed argument: wrong dimension, non-finite value, out-of-range input."""


class SetupError(RuntimeError):
    """An environment or agent could not be assembled from its ingredients."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""


class NumericalConsistencyError(RuntimeError):
    """An internal numerical invariant was violated beyond tolerance."""
