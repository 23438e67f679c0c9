"""Exception hierarchy shared by every gully_vqa module."""

from typing import Optional


class GullyError(Exception):
    """Base class for all errors raised by gully_vqa."""


# DATASET
# ///////////////////////////////////////////////////////////////
class ManifestFormatError(GullyError, ValueError):
    pass


class MissingImageError(GullyError, FileNotFoundError):
    def __init__(self, location_id: str, path):
        self.location_id = location_id
        self.path = path
        super().__init__(f"Location {location_id}: missing image {path}")


class DuplicateIdError(GullyError, ValueError):
    def __init__(self, location_id: str):
        self.location_id = location_id
        super().__init__(f"Duplicate location id: {location_id}")


class UnknownLabelTokenError(GullyError, ValueError):
    def __init__(self, location_id: str, token: str):
        self.location_id = location_id
        self.token = token
        super().__init__(f"Location {location_id}: unknown label token {token!r}")


class UnreadableImageError(GullyError, OSError):
    def __init__(self, location_id: str, path, reason: str):
        self.location_id = location_id
        self.path = path
        super().__init__(f"Location {location_id}: cannot read {path}: {reason}")


class DimensionMismatchError(GullyError, ValueError):
    pass


# COLLAGE
# ///////////////////////////////////////////////////////////////
class GridTooSmallError(GullyError, ValueError):
    pass


# BACKEND
# ///////////////////////////////////////////////////////////////
class BackendError(GullyError):
    """Any failure talking to a model server."""


class InvalidRequestError(BackendError, ValueError):
    pass


class BackendTimeoutError(BackendError, TimeoutError):
    pass


class UpstreamError(BackendError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:200]
        super().__init__(f"Upstream returned HTTP {status}: {self.body}")


class MalformedResponseError(BackendError, ValueError):
    pass


class NoRuleMatchedError(BackendError, LookupError):
    pass


# QUESTIONS
# ///////////////////////////////////////////////////////////////
class UnknownPresetError(GullyError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown preset"


class OutOfRangeError(GullyError, ValueError):
    pass


# PIPELINE
# ///////////////////////////////////////////////////////////////
class UnparseableVerdictError(GullyError, ValueError):
    def __init__(self, location_id: str, text: str):
        self.location_id = location_id
        self.text = text
        super().__init__(f"Location {location_id}: no yes/no verdict in {text[:80]!r}")


class TemplateError(GullyError, ValueError):
    pass


# MLP
# ///////////////////////////////////////////////////////////////
class DegenerateDataError(GullyError, ValueError):
    pass


class NonFiniteLossError(GullyError, FloatingPointError):
    pass


class ShapeMismatchError(GullyError, ValueError):
    pass


# QUESTION SUBSET SEARCH
# ///////////////////////////////////////////////////////////////
class MissingAnswerError(GullyError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing answer"


class EmptySubsetError(GullyError, ValueError):
    pass


class TooManyQuestionsError(GullyError, ValueError):
    pass


# EVALUATION
# ///////////////////////////////////////////////////////////////
class MissingLabelError(GullyError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing label"


class InconsistentQuestionSetsError(GullyError, ValueError):
    pass


# CONFIGURATION / CLI
# ///////////////////////////////////////////////////////////////
class InvalidValueError(GullyError, ValueError):
    def __init__(self, field: str, value, reason: Optional[str] = None):
        self.field = field
        self.value = value
        message = f"Invalid value for {field}: {value!r}"
        if reason:
            message += f" ({reason})"
        super().__init__(message)


class UsageError(GullyError):
    pass


class ArtifactFormatError(GullyError, ValueError):
    pass
