"""Exception types raised across the package."""


class AlsfError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(AlsfError):
    """Operands have incompatible shapes."""


class ShapeMismatch(DimensionMismatch):
    """A batch does not match its declared grid shape."""


class NonFiniteInput(AlsfError):
    """An input contains NaN or infinite entries."""


class InsufficientData(AlsfError):
    """Not enough samples to perform the requested operation."""


class DegenerateInit(AlsfError):
    """Initialization is impossible (e.g. identically zero training data)."""


class WeightError(AlsfError):
    """An invalid combination of regularization weights was supplied."""


class EmptyClass(AlsfError):
    """A class was declared with no samples."""


class EmptyGrid(AlsfError):
    """A patch grid with zero cells was supplied."""


class DegenerateLabels(AlsfError):
    """Threshold learning needs at least one image of each class."""


class NoValidPlacement(AlsfError):
    """No patch position satisfies the mask / size constraints."""


class ImageTooSmall(AlsfError):
    """The image cannot hold a single complete patch."""


class UpsampleRequested(AlsfError):
    """Downsampling target exceeds the source size."""


class UnsupportedFormat(AlsfError):
    """The image file format is not PNG or TIFF."""


class CorruptImage(AlsfError):
    """The image file exists but cannot be decoded."""


class ManifestError(AlsfError):
    """A dataset manifest failed to parse or validate."""


class ConfigError(AlsfError):
    """A configuration file failed to parse or validate."""


class ModelFileError(AlsfError):
    """A model file is malformed."""


class VersionMismatch(ModelFileError):
    """The model file was written with an unsupported format version."""


class ChecksumFailure(ModelFileError):
    """The model file checksum does not validate."""
