"""Exception types raised across the package."""


class PromptFedError(Exception):
    pass


class NonSymmetric(PromptFedError, ValueError):
    pass


class NoConvergence(PromptFedError, RuntimeError):
    pass


class ZeroVector(PromptFedError, ValueError):
    pass


class EmptyInput(PromptFedError, ValueError):
    pass


class DimensionMismatch(PromptFedError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class EmptyBatch(PromptFedError, ValueError):
    pass


class ZeroTotalSamples(PromptFedError, ValueError):
    pass


class DimensionTooLarge(PromptFedError, ValueError):
    pass


class DegeneratePair(PromptFedError, RuntimeError):
    pass


class MissingUpdate(PromptFedError, ValueError):
    pass


class UnknownConfig(PromptFedError, ValueError):
    pass


class InvalidK(PromptFedError, ValueError):
    pass


class InvalidParams(PromptFedError, ValueError):
    pass


class TooManyDevices(PromptFedError, ValueError):
    pass


class LabelOutOfRange(PromptFedError, ValueError):
    pass


class ParseError(PromptFedError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(PromptFedError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)
