"""Exception types shared across the package."""


class PromptEditError(Exception):
    """Base class for every error raised by this package."""


class InvalidInstruction(PromptEditError):
    """Instruction text is empty or cannot be segmented."""


class RenderOverflow(PromptEditError):
    """The query block alone exceeds the render token budget."""


class InvalidAction(PromptEditError):
    """Edit action is not valid for the prompt state it was applied to."""


class InvalidConfig(PromptEditError):
    """Configuration values violate a documented constraint."""


class InvalidTask(PromptEditError):
    """Task definition cannot be scored (e.g. fewer than two labels)."""


class ScorerUnavailable(PromptEditError):
    """Remote scorer transport failed after exhausting retries. Retryable."""


class ProtocolError(PromptEditError):
    """Remote scorer returned a malformed payload."""


class EpisodeFinished(PromptEditError):
    """step() was called on an episode that already reached its horizon."""


class ShapeError(PromptEditError):
    """Array dimensions do not match the expected shape."""


class NoActions(PromptEditError):
    """The action catalog is empty; the policy has nothing to choose."""


class NoTape(PromptEditError):
    """backward() was called without a recorded forward computation."""


class ConfigMismatch(PromptEditError):
    """Checkpoint was produced under an incompatible task/env configuration."""


class EmptySplit(PromptEditError):
    """Evaluation was requested on a split with no examples."""


class InsufficientData(PromptEditError):
    """Dataset is too small for the requested few-shot split sizes."""

    def __init__(self, message: str, per_class_counts: dict | None = None):
        super().__init__(message)
        self.per_class_counts = dict(per_class_counts or {})


class NonFiniteLoss(PromptEditError):
    """A PPO update produced a non-finite loss; the update was aborted."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
