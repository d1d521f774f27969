"""Exception types shared across the package."""


class LangLabError(Exception):
    """Base class for all package errors."""


class ConfigError(LangLabError):
    """A configuration value is invalid; the message names the offending field."""


class GenerationError(LangLabError):
    """Sentence generation failed (e.g. rejection budget exhausted)."""

    def __init__(self, message, template=None):
        super().__init__(message)
        self.template = template


class ContractError(LangLabError):
    """A caller violated a documented precondition."""


class LexiconError(LangLabError):
    """Lexicon construction failed (e.g. uniqueness unreachable)."""


class CorpusError(LangLabError):
    """Corpus assembly failed or produced an inconsistent artifact."""


class TokenizerError(LangLabError):
    """Tokenizer training or decoding failed."""

    def __init__(self, message, achieved_vocab_size=None):
        super().__init__(message)
        self.achieved_vocab_size = achieved_vocab_size


class FitError(LangLabError):
    """Model fitting received unusable data (e.g. empty corpus)."""


class TrainingDivergedError(LangLabError):
    """Training loss became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ContextError(LangLabError):
    """A sequence exceeded the model's context window."""


class StageError(LangLabError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
