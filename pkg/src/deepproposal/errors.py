"""Exception hierarchy shared across the package."""


class DeepProposalError(Exception):
    """Base class for all errors raised by this package."""


class DataIntegrityError(DeepProposalError, ValueError):
    """Input data contains non-finite values or inconsistent dimensions."""


class BoundsError(DeepProposalError, IndexError):
    """A cell box reaches outside the feature map it is applied to."""


class DegenerateInputError(DeepProposalError, ValueError):
    """A box is too small (or too far outside) for the requested operation."""


class ConfigurationError(DeepProposalError, ValueError):
    """Models, configs or bundles do not fit together."""


class TrainingError(DeepProposalError, ValueError):
    """The training set cannot produce a model (e.g. a single class)."""


class FormatError(DeepProposalError, ValueError):
    """Base class for malformed files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass


class GenerationError(DeepProposalError, RuntimeError):
    """The synthetic generator could not satisfy its placement constraints."""
