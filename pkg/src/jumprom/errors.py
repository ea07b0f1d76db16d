"""Exception types shared across the package.

Every error carries a short machine-parsable ``code`` so the CLI can emit
one-line diagnostics of the form ``ERROR <code>: <message>``.
"""


class JumpromError(Exception):
    code = "E_RUNTIME"


class ValidationError(JumpromError):
    """Input data violates a documented precondition or invariant."""

    code = "E_VALIDATE"


class DatasetLoadError(JumpromError):
    """A dataset file or manifest could not be parsed or validated."""

    code = "E_LOAD"


class NonUniformTimestepError(ValidationError):
    code = "E_TIMESTEP"


class SingularJacobianError(JumpromError):
    """Leg Jacobian too ill-conditioned to invert; carries the estimate."""

    code = "E_SINGULAR"

    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


class RankDeficientEncoderError(JumpromError):
    """Encoder weight matrix has (numerically) deficient row rank."""

    code = "E_RANK"

    def __init__(self, message, smallest_singular_value):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class TrainingDivergedError(JumpromError):
    code = "E_DIVERGED"

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class PipelineStepError(JumpromError):
    """Wraps a failure inside one of the sequential training steps."""

    code = "E_PIPELINE"

    def __init__(self, step, cause):
        super().__init__(f"pipeline step {step} failed: {cause}")
        self.step = step
        self.cause = cause


class ModelFormatError(JumpromError):
    """Model file malformed; ``byte_offset`` points at the offending line."""

    code = "E_FORMAT"

    def __init__(self, message, byte_offset):
        super().__init__(f"{message} (byte {byte_offset})")
        self.byte_offset = byte_offset


class UnsupportedModelVersionError(JumpromError):
    code = "E_VERSION"

    def __init__(self, found, supported):
        super().__init__(
            f"unsupported model format version {found!r}; this build reads version {supported}"
        )
        self.found = found
        self.supported = supported


class MissingPhaseError(JumpromError):
    """A rollout schedule references a phase the model was not trained on."""

    code = "E_PHASE"

    def __init__(self, phase):
        super().__init__(f"model has no dynamics for phase {phase!r}")
        self.phase = phase


class DivergenceError(JumpromError):
    """Integrated state became non-finite."""

    code = "E_BLOWUP"

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time
