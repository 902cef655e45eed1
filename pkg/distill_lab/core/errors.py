"""
Exception hierarchy

All errors raised by the lab derive from DistillLabError so the CLI can map
them onto exit codes.
"""

from typing import List, Optional


class DistillLabError(Exception):
    """Base class for all lab errors"""


class ConfigValidationError(DistillLabError, ValueError):
    """Configuration failed schema validation"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("Configuration validation failed: " + "; ".join(self.errors))


class InvariantViolation(DistillLabError, ValueError):
    """A domain type invariant or operation precondition does not hold"""


class ArtifactError(DistillLabError):
    """A required artifact is missing or unreadable"""


class EvaluationError(DistillLabError):
    """Evaluation inputs cannot produce a defined result"""


class TrainingDivergedError(DistillLabError):
    """Training loss became NaN or infinite"""

    def __init__(self, step: int, epoch: int, loss: float):
        self.step = step
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"Training diverged at step {step} (epoch {epoch}): loss={loss}")


class NonFiniteGradientError(DistillLabError):
    """Gradients contain NaN or Inf; the optimizer step was aborted"""

    def __init__(self, tensors: List[str], step: int):
        self.tensors = list(tensors)
        self.step = step
        super().__init__(f"Non-finite gradients at step {step} in: {', '.join(self.tensors)}")


class StageFailure(DistillLabError):
    """A pipeline stage failed"""

    def __init__(self, stage: str, message: str, artifacts: Optional[List[str]] = None):
        self.stage = stage
        self.artifacts = list(artifacts or [])
        trail = f" (artifacts so far: {', '.join(self.artifacts)})" if self.artifacts else ""
        super().__init__(f"Stage '{stage}' failed: {message}{trail}")
