"""
نموذج التحقق من إعدادات المهمة
Validation of a merged job configuration (JSON document plus flags).
"""
from pathlib import Path

from django import forms
from django.utils.translation import gettext_lazy as _

from comparison.models import WindowPlan
from core.exceptions import ConfigError, InvalidLabelScheme
from core.models import RankingStrategy
from explain.models import CriteriaMode
from explain.store import CriteriaStore
from gateway.models import BackendConfig, BackendKind, TokenizerKind
from profiles.models import PROFILE_FIELDS, LabelScheme
from scoring.models import FailurePolicy, ScoreStrategy

PATH_FIELDS = ('corpus', 'queries', 'qrels', 'run', 'assignment', 'backend_oracle_qrels')


class JobConfigForm(forms.Form):
    """نموذج إعدادات المهمة"""

    backend_kind = forms.ChoiceField(label=_('backend'), choices=BackendKind.choices, required=False)
    backend_model_id = forms.CharField(required=False)
    backend_endpoint_url = forms.URLField(required=False)
    backend_request_timeout = forms.FloatField(required=False, min_value=0.001)
    backend_max_in_flight = forms.IntegerField(required=False, min_value=1)
    backend_top_logprobs = forms.IntegerField(required=False, min_value=1)
    backend_credential_env_var = forms.CharField(required=False)
    backend_oracle_qrels = forms.CharField(required=False)
    backend_replay_dir = forms.CharField(required=False)
    backend_tokenizer = forms.ChoiceField(choices=TokenizerKind.choices, required=False)

    labels = forms.JSONField(required=False)
    strategy = forms.ChoiceField(choices=RankingStrategy.choices, required=False)
    score_strategy = forms.ChoiceField(choices=ScoreStrategy.choices, required=False)
    failure_policy = forms.ChoiceField(choices=FailurePolicy.choices, required=False)
    window_size = forms.IntegerField(required=False, min_value=1)
    step_size = forms.IntegerField(required=False, min_value=1)
    passes = forms.IntegerField(required=False, min_value=1)
    criteria_mode = forms.ChoiceField(choices=CriteriaMode.choices, required=False)

    profile_budget = forms.IntegerField(required=False, min_value=1)
    criteria_budget = forms.IntegerField(required=False, min_value=1)
    rationale_budget = forms.IntegerField(required=False, min_value=1)

    corpus = forms.CharField(required=False)
    queries = forms.CharField(required=False)
    qrels = forms.CharField(required=False)
    run = forms.CharField(required=False)
    criteria_dir = forms.CharField(required=False)
    assignment = forms.CharField(required=False)
    cache_dir = forms.CharField(required=False)
    no_cache = forms.BooleanField(required=False)
    output_dir = forms.CharField(required=False)

    seed = forms.IntegerField(required=False, min_value=0)
    top_k = forms.IntegerField(required=False, min_value=1)
    field_order = forms.JSONField(required=False)
    query_ids = forms.JSONField(required=False)

    def __init__(self, *args, required=(), **kwargs):
        super().__init__(*args, **kwargs)
        self.required_fields = tuple(required)

    def clean(self):
        cleaned_data = super().clean()

        for name in self.required_fields:
            if not cleaned_data.get(name) and name not in self.errors:
                self.add_error(name, _('This field is required.'))

        for name in PATH_FIELDS:
            value = cleaned_data.get(name)
            if value and not Path(value).exists():
                self.add_error(name, _('Path %(path)s does not exist.') % {'path': value})

        window_size = cleaned_data.get('window_size') or 20
        step_size = cleaned_data.get('step_size') or 10
        try:
            cleaned_data['window_plan'] = WindowPlan(window_size, step_size, cleaned_data.get('passes') or 1)
        except ConfigError as e:
            self.add_error(e.field, str(e))

        labels = cleaned_data.get('labels')
        try:
            cleaned_data['scheme'] = LabelScheme.default() if labels in (None, '') else LabelScheme.from_dict(labels)
        except (InvalidLabelScheme, KeyError, TypeError, ValueError) as e:
            self.add_error('labels', str(e))

        field_order = cleaned_data.get('field_order')
        if field_order:
            unknown = [name for name in field_order if name not in PROFILE_FIELDS] if isinstance(field_order, list) else [field_order]
            if unknown:
                self.add_error('field_order', _('Unknown profile fields: %(fields)s') % {'fields': unknown})

        strategy = cleaned_data.get('strategy') or RankingStrategy.POINTWISE
        mode = cleaned_data.get('criteria_mode') or CriteriaMode.NONE
        if mode != CriteriaMode.NONE:
            if strategy != RankingStrategy.POINTWISE:
                self.add_error('criteria_mode', _('Criteria are only injected into pointwise ranking prompts.'))
            self._check_criteria_dir(cleaned_data, mode)

        self._build_backend(cleaned_data)
        return cleaned_data

    def _check_criteria_dir(self, cleaned_data, mode):
        directory = cleaned_data.get('criteria_dir')
        if not directory or not Path(directory).is_dir():
            self.add_error('criteria_dir', _('A populated criteria directory is required for criteria mode %(mode)s.') % {'mode': mode})
            return
        selected = CriteriaStore(directory).selected_assignment()
        if not selected:
            self.add_error('criteria_dir', _('The criteria directory has no selected criteria.'))
        elif mode == CriteriaMode.SHUFFLED and not cleaned_data.get('assignment') and len(selected) < 2:
            self.add_error('criteria_dir', _('Shuffling needs an assignment manifest or at least two pairs.'))

    def _build_backend(self, cleaned_data):
        oracle_qrels = cleaned_data.get('backend_oracle_qrels') or cleaned_data.get('qrels') or ''
        try:
            cleaned_data['backend'] = BackendConfig(
                kind=cleaned_data.get('backend_kind') or BackendKind.NOISE,
                model_id=cleaned_data.get('backend_model_id') or '',
                endpoint_url=cleaned_data.get('backend_endpoint_url') or '',
                request_timeout=cleaned_data.get('backend_request_timeout'),
                max_in_flight=cleaned_data.get('backend_max_in_flight'),
                credential_env_var=cleaned_data.get('backend_credential_env_var') or None,
                top_logprobs=cleaned_data.get('backend_top_logprobs'),
                seed=cleaned_data.get('seed') or 0,
                oracle_qrels_path=str(oracle_qrels),
                replay_dir=cleaned_data.get('backend_replay_dir') or '',
                tokenizer=cleaned_data.get('backend_tokenizer') or TokenizerKind.AUTO,
            )
        except ConfigError as e:
            name = e.field.replace('.', '_')
            if name == 'backend_oracle_qrels_path':
                name = 'backend_oracle_qrels'
            self.add_error(name if name in self.fields else None, str(e))
