"""
نماذج بوابة النماذج اللغوية
Backend configuration, request and response records.
"""
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

from django.db import models
from django.utils.translation import gettext_lazy as _

from core.exceptions import ConfigError
from core.utils import canonical_json, get_setting, sha256_text


class BackendKind(models.TextChoices):
    HTTP = 'http_openai_compatible', _('OpenAI-compatible completion endpoint')
    ORACLE = 'oracle', _('Oracle (planted labels)')
    NOISE = 'noise', _('Seeded noise')
    REPLAY = 'replay', _('Replay of recorded responses')


class RequestKind(models.TextChoices):
    LABEL_LOGITS = 'label_logits', _('Next-token label logits')
    GENERATE_TEXT = 'generate_text', _('Free-text generation')


class FinishReason(models.TextChoices):
    STOP = 'stop', _('Stop')
    LENGTH = 'length', _('Length budget exhausted')
    ERROR = 'error', _('Error')


class LogitProvenance(models.TextChoices):
    OBSERVED = 'observed', _('Observed in top-K')
    FLOORED = 'floored', _('Floored')


class TokenizerKind(models.TextChoices):
    AUTO = 'auto', _('Backend default')
    REFERENCE = 'reference', _('Reference sub-word chunker')
    CHAR_BUDGET = 'char_budget', _('Fixed characters per token')
    ENDPOINT = 'endpoint', _('Server tokenize routes')


@dataclass(frozen=True)
class BackendConfig:
    """إعدادات الاتصال بالنموذج"""

    kind: str = BackendKind.NOISE
    model_id: str = ''
    endpoint_url: str = ''
    request_timeout: Optional[float] = None
    max_in_flight: Optional[int] = None
    credential_env_var: Optional[str] = None
    top_logprobs: Optional[int] = None
    seed: int = 0
    oracle_qrels_path: str = ''
    replay_dir: str = ''
    tokenizer: str = TokenizerKind.AUTO
    oracle_qrels: Optional[Mapping[str, Mapping[str, int]]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        defaults = {
            'request_timeout': get_setting('DEFAULT_REQUEST_TIMEOUT'),
            'max_in_flight': get_setting('MAX_IN_FLIGHT'),
            'credential_env_var': get_setting('CREDENTIAL_ENV_VAR'),
            'top_logprobs': get_setting('TOP_LOGPROBS'),
        }
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if not self.model_id:
            object.__setattr__(self, 'model_id', str(self.kind))

        if self.kind not in BackendKind.values:
            raise ConfigError('backend.kind', f"unknown backend kind {self.kind!r}")
        if self.tokenizer not in TokenizerKind.values:
            raise ConfigError('backend.tokenizer', f"unknown tokenizer {self.tokenizer!r}")
        if self.tokenizer == TokenizerKind.ENDPOINT and not self.endpoint_url:
            raise ConfigError('backend.endpoint_url', 'the endpoint tokenizer needs the server URL')
        if self.max_in_flight < 1:
            raise ConfigError('backend.max_in_flight', 'must be at least 1')
        if self.top_logprobs < 1:
            raise ConfigError('backend.top_logprobs', 'must be at least 1')
        if self.request_timeout <= 0:
            raise ConfigError('backend.request_timeout', 'must be positive')
        if self.kind == BackendKind.HTTP and not self.endpoint_url:
            raise ConfigError('backend.endpoint_url', 'required for the HTTP backend')
        if self.kind == BackendKind.REPLAY and not self.replay_dir:
            raise ConfigError('backend.replay_dir', 'required for the replay backend')
        if self.kind == BackendKind.ORACLE and self.oracle_qrels is None and not self.oracle_qrels_path:
            raise ConfigError('backend.oracle_qrels_path', 'the oracle backend needs hidden qrels')

    @property
    def identity(self) -> str:
        if self.kind == BackendKind.NOISE:
            return f"{self.model_id}#seed={self.seed}"
        return self.model_id

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'BackendConfig':
        known = {name for name in cls.__dataclass_fields__ if name != 'oracle_qrels'}
        return cls(**{key: value for key, value in data.items() if key in known and value not in (None, '')})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop('oracle_qrels', None)
        return data


@dataclass(frozen=True)
class RequestHints:
    """
    Side information about a request.

    HTTP backends never see it; the oracle backend reads the ids to look up
    its hidden judgments.
    """

    task: str = ''
    query_id: str = ''
    doctor_ids: Tuple[str, ...] = ()
    disease: str = ''
    treatment: str = ''
    label: str = ''

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['doctor_ids'] = list(self.doctor_ids)
        return data


@dataclass(frozen=True)
class CacheKey:
    digest: str

    @classmethod
    def build(cls, identity: str, kind: str, prompt: str, params: Mapping[str, Any], hints=None) -> 'CacheKey':
        material = {
            'backend': identity,
            'kind': str(kind),
            'prompt_sha256': sha256_text(prompt),
            'params': dict(params),
        }
        if hints is not None:
            material['hints'] = hints.to_dict()
        return cls(sha256_text(canonical_json(material)))

    def __str__(self):
        return self.digest


@dataclass(frozen=True)
class BackendRequest:
    kind: str
    prompt: str
    params: Mapping[str, Any] = field(default_factory=dict)
    hints: Optional[RequestHints] = None

    def cache_key(self, identity: str, include_hints: bool = False) -> CacheKey:
        return CacheKey.build(
            identity, self.kind, self.prompt, self.params,
            self.hints if include_hints and self.hints is not None else None
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': str(self.kind),
            'prompt': self.prompt,
            'params': dict(self.params),
            'hints': self.hints.to_dict() if self.hints else None,
        }


@dataclass(frozen=True)
class LabelLogits:
    """Raw per-label confidences, aligned index for index with a LabelScheme."""

    labels: Tuple[str, ...]
    values: Tuple[float, ...]
    provenance: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'labels', tuple(self.labels))
        object.__setattr__(self, 'values', tuple(float(v) for v in self.values))
        if not self.provenance:
            object.__setattr__(self, 'provenance', (LogitProvenance.OBSERVED.value,) * len(self.values))
        else:
            object.__setattr__(self, 'provenance', tuple(str(p) for p in self.provenance))
        if not (len(self.labels) == len(self.values) == len(self.provenance)):
            raise ValueError('labels, values and provenance must have equal length')
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"non-finite logits {self.values}")

    @property
    def argmax_index(self) -> int:
        # ties go to the lower label
        best = 0
        for index, value in enumerate(self.values):
            if value > self.values[best]:
                best = index
        return best

    @property
    def predicted_label(self) -> str:
        return self.labels[self.argmax_index]

    @property
    def floored_count(self) -> int:
        return sum(1 for p in self.provenance if p == LogitProvenance.FLOORED)

    def to_dict(self) -> Dict[str, Any]:
        return {'labels': list(self.labels), 'values': list(self.values), 'provenance': list(self.provenance)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'LabelLogits':
        return cls(tuple(data['labels']), tuple(data['values']), tuple(data.get('provenance') or ()))


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str = FinishReason.STOP

    def __post_init__(self):
        if self.text is None:
            raise ValueError('generation text must not be None')
        if self.finish_reason not in FinishReason.values:
            raise ValueError(f"unknown finish reason {self.finish_reason!r}")
        if not self.text and self.finish_reason != FinishReason.ERROR:
            raise ValueError('empty generation is only allowed with finish_reason=error')

    def to_dict(self) -> Dict[str, Any]:
        return {'text': self.text, 'finish_reason': str(self.finish_reason)}


class RequestTask(models.TextChoices):
    RANKING = 'ranking', _('Pointwise relevance label')
    RATIONALE = 'rationale', _('Evaluation rationale')
    CRITERIA = 'criteria', _('Ranking criteria')
    PAIRWISE = 'pairwise', _('Pairwise preference')
    LISTWISE = 'listwise', _('Window permutation')
