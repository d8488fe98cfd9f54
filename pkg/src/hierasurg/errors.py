"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument value violates a documented precondition."""


class ShapeError(ValueError):
    """Array shapes are inconsistent with each other or with a config."""


class SingularityError(ArithmeticError):
    """An operation would divide by a vanishing schedule coefficient."""


class PaletteLookupError(KeyError):
    """A segmentation map contains an id with no palette entry."""


class NumericError(ArithmeticError):
    """A numeric input or intermediate result is non-finite."""


class VocabularyError(KeyError):
    """A phase or triplet id is outside its embedding vocabulary."""


class IntegrityError(RuntimeError):
    """A file on disk is missing, truncated, or fails its checksum."""


class GenerationError(RuntimeError):
    """Procedural scene generation cannot satisfy its constraints."""


class PipelineError(RuntimeError):
    """A labeling backend failed; carries frame context in the message."""


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""
