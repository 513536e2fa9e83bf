"""Exception hierarchy shared by every stage of the codec."""


class CodecError(Exception):
    """Base class; ``kind`` is the short tag printed by the CLI."""

    kind = "error"


class ConfigurationError(CodecError, ValueError):
    kind = "config"


class NumericError(CodecError, FloatingPointError):
    kind = "numeric"


class StateError(CodecError, RuntimeError):
    kind = "state"


class EncodingError(CodecError, ValueError):
    kind = "encode"


class DecodeError(CodecError, ValueError):
    kind = "decode"


class FormatError(CodecError, ValueError):
    kind = "format"


class ModelMismatchError(CodecError, ValueError):
    kind = "model-mismatch"


class TrainingDivergedError(NumericError):
    kind = "diverged"

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step
