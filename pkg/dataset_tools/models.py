"""
نماذج أدوات البيانات
Pool entries, mining parameters, mined negatives and validation findings.
"""
from dataclasses import asdict, dataclass, field
from typing import List

from django.db import models
from django.utils.translation import gettext_lazy as _

from core.exceptions import ConfigError


class NegativeSource(models.TextChoices):
    POOL = 'pool', _('First-stage pool')
    CROSS_PAIR = 'cross_pair', _('Positive of another pair')


class Severity(models.TextChoices):
    WARNING = 'warning', _('Warning')
    ERROR = 'error', _('Error')


@dataclass(frozen=True)
class PoolEntry:
    doctor_id: str
    profile_token_length: int
    reranker_score: float

    def __post_init__(self):
        if self.profile_token_length < 0:
            raise ValueError(f"negative profile length for {self.doctor_id}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MiningParams:
    min_profile_tokens: int = 1024
    top_exclude_fraction: float = 0.01
    replacement_fraction: float = 0.30
    cross_pair_min_label: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.min_profile_tokens < 0:
            raise ConfigError('mining.min_profile_tokens', 'must be non-negative')
        for name in ('top_exclude_fraction', 'replacement_fraction'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"mining.{name}", 'must lie in [0, 1]')

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MinedNegative:
    doctor_id: str
    source: str


@dataclass(frozen=True)
class ValidationFinding:
    severity: str
    code: str
    message: str
    path: str = ''
    line_number: int = 0

    def __str__(self):
        location = f"{self.path}:{self.line_number}: " if self.path else ''
        return f"[{self.severity}] {location}{self.message}"


@dataclass
class ValidationReport:
    """Exit codes: 0 clean, 1 warnings only, 2 errors."""

    findings: List[ValidationFinding] = field(default_factory=list)

    def add(self, severity: str, code: str, message: str, path='', line_number: int = 0):
        self.findings.append(ValidationFinding(str(severity), code, message, str(path), line_number))

    @property
    def errors(self) -> List[ValidationFinding]:
        return [f for f in self.findings if f.severity == Severity.ERROR]

    @property
    def warnings(self) -> List[ValidationFinding]:
        return [f for f in self.findings if f.severity == Severity.WARNING]

    @property
    def status(self) -> str:
        if self.errors:
            return 'errors'
        if self.warnings:
            return 'warnings'
        return 'clean'

    @property
    def exit_code(self) -> int:
        return {'clean': 0, 'warnings': 1, 'errors': 2}[self.status]
