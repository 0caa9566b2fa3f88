# app/hullshape/errors.py


class HullShapeError(Exception):
    """Root of every error raised by the hullshape package."""


class ModelError(HullShapeError, ValueError):
    """Unknown model name, invalid model parameters or an invalid time grid."""


class NotPositiveSemiDefinite(HullShapeError):
    """Gram matrix could not be factorized, even after one diagonal jitter."""


class GeometryError(HullShapeError, ValueError):
    pass


class ExperimentError(HullShapeError, ValueError):
    pass


class ConfigError(HullShapeError, ValueError):
    """Malformed HULLSHAPE_* environment variable."""
