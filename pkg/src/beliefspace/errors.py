"""Exception types shared across the package."""


class BeliefspaceError(Exception):
    """Base class for all package-specific errors."""


class ContextTooLong(BeliefspaceError):
    """A context (plus continuation) exceeds the model's position budget."""


class NonFiniteLoss(BeliefspaceError):
    """A loss or gradient turned non-finite; the pending update is aborted."""


class EmptyBeliefSpace(BeliefspaceError):
    """A belief search completed no hypothesis with a finite score."""


class PlaceholderMissing(BeliefspaceError):
    """A prompt template lacks its {INPUT} or {OUTPUT} placeholder."""


class EmptyField(BeliefspaceError):
    """A required string input (question, answer, ...) is empty."""


class MissingBeliefs(BeliefspaceError):
    """A rectification pair lacks beliefs on the suppress or enhance side."""


class EmptyPool(BeliefspaceError):
    """An evidence pool or enhance set is empty where documents are required."""


class DegenerateGradient(BeliefspaceError):
    """A gradient norm is too small for a cosine to be meaningful."""


class SchemaError(BeliefspaceError):
    """A dataset record failed validation; message names the offending line."""


class DuplicateId(BeliefspaceError):
    """Two dataset records share an id."""


class InsufficientData(BeliefspaceError):
    """Not enough instances to build the requested splits."""


class CheckpointMismatch(BeliefspaceError):
    """A checkpoint's vocabulary hash or format does not match expectations."""


class LengthMismatch(BeliefspaceError):
    """Paired vectors have different lengths."""


class EmptyInput(BeliefspaceError):
    """An aggregate operation received no items."""


class StageError(BeliefspaceError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
