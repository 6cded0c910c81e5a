"""Exception hierarchy. Every error carries a short machine-readable code used by the CLI."""


class ResperError(Exception):
    code = "E_RESPER"


class PreconditionError(ResperError, ValueError):
    code = "E_PRECONDITION"


class ParseError(ResperError, ValueError):
    code = "E_PARSE"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ResperError, ValueError):
    code = "E_SCHEMA"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyPopulationError(ResperError, ValueError):
    code = "E_EMPTY"


class UndefinedKappaError(ResperError, ArithmeticError):
    code = "E_KAPPA_UNDEFINED"


class EmptyUtteranceError(ResperError, ValueError):
    code = "E_EMPTY_UTTERANCE"


class ProviderError(ResperError, RuntimeError):
    code = "E_PROVIDER"


class ShapeError(ResperError, ValueError):
    code = "E_SHAPE"


class CheckpointError(ResperError, RuntimeError):
    code = "E_CHECKPOINT"


class TrainingDivergedError(ResperError, RuntimeError):
    code = "E_DIVERGED"

    def __init__(self, epoch, conversation_id, loss):
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, conversation {conversation_id!r}"
        )
        self.epoch = epoch
        self.conversation_id = conversation_id


class DegenerateScenarioError(ResperError, ValueError):
    code = "E_DEGENERATE_SCENARIO"


class NoSaleError(ResperError, ValueError):
    code = "E_NO_SALE"


class MetadataError(ResperError, ValueError):
    code = "E_METADATA"


class VocabularyError(ResperError, KeyError):
    code = "E_VOCABULARY"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(ResperError, ValueError):
    code = "E_CONFIG"
