"""
إعدادات المهمة
A job is one JSON document plus command-line overrides; flags win.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from comparison.models import WindowPlan
from core.exceptions import ConfigError
from core.forms import JobConfigForm
from core.models import RankingStrategy
from core.utils import canonical_json, get_setting, sha256_text
from explain.models import CriteriaMode
from gateway.models import BackendConfig
from profiles.models import LabelScheme
from scoring.models import FailurePolicy, ScoreStrategy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JobConfig:
    backend: BackendConfig
    scheme: LabelScheme
    strategy: str = RankingStrategy.POINTWISE
    score_strategy: str = ScoreStrategy.SUM
    failure_policy: str = FailurePolicy.ABORT
    window_plan: WindowPlan = field(default_factory=WindowPlan)
    criteria_mode: str = CriteriaMode.NONE
    profile_budget: int = 2048
    criteria_budget: int = 1024
    rationale_budget: int = 512
    corpus_path: Optional[Path] = None
    queries_path: Optional[Path] = None
    qrels_path: Optional[Path] = None
    run_path: Optional[Path] = None
    criteria_dir: Optional[Path] = None
    assignment_path: Optional[Path] = None
    cache_dir: Optional[Path] = None
    output_dir: Optional[Path] = None
    seed: int = 0
    top_k: Optional[int] = None
    field_order: Optional[Tuple[str, ...]] = None
    query_ids: Tuple[str, ...] = ()

    @property
    def with_criteria(self) -> bool:
        return self.criteria_mode != CriteriaMode.NONE

    def to_dict(self) -> Dict[str, Any]:
        data = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, Path):
                value = str(value)
            elif isinstance(value, (BackendConfig, LabelScheme)):
                value = value.to_dict()
            elif isinstance(value, WindowPlan):
                value = asdict(value)
            elif isinstance(value, tuple):
                value = list(value)
            elif hasattr(value, 'value'):
                value = value.value
            data[name] = value
        return data

    @property
    def digest(self) -> str:
        return sha256_text(canonical_json(self.to_dict()))

    @classmethod
    def from_cleaned(cls, cleaned: Mapping[str, Any]) -> 'JobConfig':
        def path(name):
            return Path(cleaned[name]) if cleaned.get(name) else None

        cache_dir = None
        if not cleaned.get('no_cache'):
            cache_dir = path('cache_dir') or Path(get_setting('CACHE_DIR'))
        return cls(
            backend=cleaned['backend'],
            scheme=cleaned['scheme'],
            strategy=cleaned.get('strategy') or RankingStrategy.POINTWISE,
            score_strategy=cleaned.get('score_strategy') or ScoreStrategy.SUM,
            failure_policy=cleaned.get('failure_policy') or FailurePolicy.ABORT,
            window_plan=cleaned['window_plan'],
            criteria_mode=cleaned.get('criteria_mode') or CriteriaMode.NONE,
            profile_budget=cleaned.get('profile_budget') or get_setting('PROFILE_TOKEN_BUDGET'),
            criteria_budget=cleaned.get('criteria_budget') or get_setting('CRITERIA_TOKEN_BUDGET'),
            rationale_budget=cleaned.get('rationale_budget') or get_setting('RATIONALE_TOKEN_BUDGET'),
            corpus_path=path('corpus'),
            queries_path=path('queries'),
            qrels_path=path('qrels'),
            run_path=path('run'),
            criteria_dir=path('criteria_dir'),
            assignment_path=path('assignment'),
            cache_dir=cache_dir,
            output_dir=path('output_dir'),
            seed=cleaned.get('seed') or 0,
            top_k=cleaned.get('top_k'),
            field_order=tuple(cleaned['field_order']) if cleaned.get('field_order') else None,
            query_ids=tuple(str(q) for q in cleaned.get('query_ids') or ()),
        )


def flatten_document(document: Mapping[str, Any]) -> Dict[str, Any]:
    """{"backend": {"kind": ...}} becomes {"backend_kind": ...}; other keys pass through."""
    flat = {}
    for key, value in document.items():
        if key == 'backend' and isinstance(value, Mapping):
            for inner, inner_value in value.items():
                flat[f"backend_{inner}"] = inner_value
        elif key == 'window' and isinstance(value, Mapping):
            for inner in ('window_size', 'step_size', 'passes'):
                if inner in value:
                    flat[inner] = value[inner]
        else:
            flat[key] = value
    if 'backend_oracle_qrels_path' in flat:
        flat.setdefault('backend_oracle_qrels', flat.pop('backend_oracle_qrels_path'))
    return flat


def read_config_document(path) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as handle:
            document = json.load(handle)
    except FileNotFoundError:
        raise ConfigError('config', f"{path} does not exist")
    except ValueError as e:
        raise ConfigError('config', f"{path} is not valid JSON ({e})")
    if not isinstance(document, dict):
        raise ConfigError('config', 'the job document must be a JSON object')
    return document


def load_job_config(
    config_path=None,
    overrides: Optional[Mapping[str, Any]] = None,
    required: Sequence[str] = (),
) -> JobConfig:
    """
    تحميل إعدادات المهمة والتحقق منها

    Overrides with value None are ignored, every other override replaces the
    document's key. The first form error is raised as ConfigError naming the
    field; all errors are logged.
    """
    data = flatten_document(read_config_document(config_path)) if config_path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    for key in ('field_order', 'query_ids'):
        if isinstance(data.get(key), str):
            data[key] = [item.strip() for item in data[key].split(',') if item.strip()]

    form = JobConfigForm(data=data, required=required)
    if not form.is_valid():
        errors = form.errors.get_json_data()
        for name, items in errors.items():
            for item in items:
                logger.error(f"Invalid job configuration, {name}: {item['message']}")
        name, items = next(iter(errors.items()))
        raise ConfigError('config' if name == '__all__' else name, items[0]['message'])
    return JobConfig.from_cleaned(form.cleaned_data)


# ---------------------------------------------------------------------------
# Command-line flags
# ---------------------------------------------------------------------------

OPTION_FIELDS = {
    'backend': 'backend_kind',
    'model_id': 'backend_model_id',
    'endpoint_url': 'backend_endpoint_url',
    'timeout': 'backend_request_timeout',
    'max_in_flight': 'backend_max_in_flight',
    'top_logprobs': 'backend_top_logprobs',
    'oracle_qrels': 'backend_oracle_qrels',
    'replay_dir': 'backend_replay_dir',
    'tokenizer': 'backend_tokenizer',
}

JOB_OPTIONS = (
    'labels', 'strategy', 'score_strategy', 'failure_policy', 'window_size', 'step_size', 'passes',
    'criteria_mode', 'profile_budget', 'criteria_budget', 'rationale_budget', 'corpus', 'queries',
    'qrels', 'run', 'criteria_dir', 'assignment', 'cache_dir', 'no_cache', 'output_dir', 'seed',
    'top_k', 'field_order', 'query_ids',
)


def add_backend_arguments(parser):
    group = parser.add_argument_group('backend')
    group.add_argument('--config', help='JSON job document; flags override its keys')
    group.add_argument('--backend', help='http_openai_compatible, oracle, noise or replay')
    group.add_argument('--model-id')
    group.add_argument('--endpoint-url')
    group.add_argument('--timeout', type=float)
    group.add_argument('--max-in-flight', type=int)
    group.add_argument('--top-logprobs', type=int)
    group.add_argument('--oracle-qrels', help='hidden judgments of the oracle backend (default: --qrels)')
    group.add_argument('--replay-dir')
    group.add_argument('--tokenizer', help='auto, reference, char_budget or endpoint (replay default: as recorded)')
    group.add_argument('--cache-dir')
    group.add_argument('--no-cache', action='store_true', default=None)
    group.add_argument('--seed', type=int)


def add_job_arguments(parser):
    add_backend_arguments(parser)
    group = parser.add_argument_group('job')
    group.add_argument('--labels', help='number of labels (2-5) or a JSON list of label names')
    group.add_argument('--strategy', help='pointwise, pairwise or listwise')
    group.add_argument('--score-strategy', help='sum, max_logit or max_prob')
    group.add_argument('--failure-policy', help='abort or exclude')
    group.add_argument('--window-size', type=int)
    group.add_argument('--step-size', type=int)
    group.add_argument('--passes', type=int)
    group.add_argument('--criteria-mode', help='none, matched or shuffled')
    group.add_argument('--profile-budget', type=int)
    group.add_argument('--criteria-budget', type=int)
    group.add_argument('--rationale-budget', type=int)
    group.add_argument('--corpus')
    group.add_argument('--queries')
    group.add_argument('--qrels')
    group.add_argument('--criteria-dir')
    group.add_argument('--assignment')
    group.add_argument('--output-dir')
    group.add_argument('--field-order', help='comma-separated profile fields')
    group.add_argument('--query-ids', help='comma-separated query ids')


def overrides_from_options(options: Mapping[str, Any]) -> Dict[str, Any]:
    overrides = {}
    for name in list(OPTION_FIELDS) + list(JOB_OPTIONS):
        if name in options and options[name] is not None:
            overrides[OPTION_FIELDS.get(name, name)] = options[name]
    return overrides
