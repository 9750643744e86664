"""Exception hierarchy shared across the package.

Two branches matter for the CLI exit-code contract: ``ValidationError``
(bad inputs, schemas, shapes -> exit code 2) and ``ClientError``
(LLM backend failures -> exit code 3).
"""


class PromptMotionError(Exception):
    """Base class for all package errors."""


class ValidationError(PromptMotionError):
    """Invalid user input, configuration, schema, or tensor shape."""


class ClientError(PromptMotionError):
    """Failure while talking to an LLM completion backend."""


# prompting
class EmptyPhrase(ValidationError):
    pass


class UnknownPromptVersion(ValidationError):
    pass


class ClientUnavailable(ClientError):
    pass


class EmptyCompletion(ClientError):
    pass


class CacheCorrupt(PromptMotionError):
    """Stored description record failed schema validation.

    Normally swallowed: the cache treats a corrupt record as a miss
    after logging it.
    """


# embedding
class EmptyText(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EmptyList(ValidationError):
    pass


# motion
class DegenerateInput(ValidationError):
    pass


class NotARotation(ValidationError):
    pass


class SkeletonMismatch(ValidationError):
    pass


# models
class ShapeMismatch(ValidationError):
    pass


class MissingPastContext(ValidationError):
    pass


class PastWindowTooLarge(ValidationError):
    pass


class NonFiniteLoss(PromptMotionError):
    """Training loss became NaN/inf; signals divergence, training should halt."""


# harness
class SchemaError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass
