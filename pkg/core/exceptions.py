"""
أخطاء محرك الترتيب
Domain errors shared by every app of the ranking engine.
"""


class MedRankError(Exception):
    """Base class of every error raised on purpose by the engine."""


class AllFieldsEmpty(MedRankError):
    pass


class EmptyField(MedRankError):
    pass


class InvalidLabelScheme(MedRankError):
    pass


class LabelTokenCollision(MedRankError):
    def __init__(self, first, second, token):
        self.labels = (first, second)
        self.token = token
        super().__init__(f"Labels '{first}' and '{second}' share the first token {token!r}")


class BackendError(MedRankError):
    pass


class BackendTimeout(BackendError):
    pass


class BackendProtocolError(BackendError):
    pass


class CacheCorrupt(MedRankError):
    pass


class CandidateFailed(MedRankError):
    def __init__(self, query_id, doctor_id, cause):
        self.query_id = query_id
        self.doctor_id = doctor_id
        self.cause = cause
        super().__init__(f"Scoring failed for {query_id}/{doctor_id}: {cause}")


class TooFewPairs(MedRankError):
    pass


class InsufficientStratum(MedRankError):
    def __init__(self, disease, level, available, required):
        self.disease = disease
        self.level = level
        super().__init__(
            f"Disease '{disease}' has {available} doctors at level {level}, {required} required"
        )


class PoolExhausted(MedRankError):
    pass


class CrossPairExhausted(MedRankError):
    pass


class ParseError(MedRankError):
    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class MissingSidecar(MedRankError):
    pass


class ConfigError(MedRankError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
