"""Exception hierarchy shared across the engine."""


class MergeViTError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MergeViTError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ParameterError(MergeViTError, ValueError):
    """A scalar argument is outside its valid range."""


class ConfigError(MergeViTError, ValueError):
    """Model configuration or parameter set is inconsistent."""


class WeightFileError(MergeViTError):
    """Base class for weight-file format problems."""


class MagicError(WeightFileError):
    pass


class TruncatedError(WeightFileError):
    pass


class LayoutError(WeightFileError):
    pass


class MissingTensorError(WeightFileError):
    pass


class ShapeMismatchError(WeightFileError):
    pass


class PPMError(MergeViTError, ValueError):
    """Malformed or unsupported PPM input."""


class UnsupportedVariantError(PPMError):
    pass
