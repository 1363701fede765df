class DolphinError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(DolphinError):
    pass


# tokenizer

class TokenizerError(DolphinError):
    pass


class BudgetExhaustedError(TokenizerError):
    pass


class PoolExhaustedError(TokenizerError):
    pass


class DuplicateNameError(TokenizerError):
    pass


class InvalidTokenNameError(TokenizerError):
    pass


class TokenIdOutOfRangeError(TokenizerError):
    pass


class ModelFormatError(TokenizerError):
    pass


# sampler

class SamplingError(DolphinError):
    pass


class InvalidAlphaError(SamplingError):
    pass


class EmptySpecError(SamplingError):
    pass


# datapipe

class DataPipeError(DolphinError):
    pass


class InvalidFractionError(DataPipeError):
    pass


class ShardIOError(DataPipeError):
    pass


class CorruptRecordError(DataPipeError):
    pass


class ManifestError(DataPipeError):
    pass


# biasing

class BiasingError(DolphinError):
    pass


class TokenRangeError(BiasingError):
    pass


class ShapeMismatchError(BiasingError):
    pass


class PromptTokensMissingError(BiasingError):
    pass


class HotwordListError(BiasingError):
    pass


class PosteriorgramFormatError(BiasingError):
    pass


# decoder

class DecoderError(DolphinError):
    pass


class EmptyPosteriorgramError(DecoderError):
    pass


class EmptyPhraseError(DecoderError):
    pass


class InvalidBiasWeightError(DecoderError):
    pass


# metrics

class MetricsError(DolphinError):
    pass


class EmptyReferenceError(MetricsError):
    pass


class ZeroBaselineError(MetricsError):
    pass
