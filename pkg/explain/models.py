"""
نماذج معايير الترتيب والتبريرات
Ranking criteria documents and evaluation rationales.
"""
from dataclasses import asdict, dataclass
from typing import Optional

from django.db import models
from django.utils.translation import gettext_lazy as _

from core.exceptions import EmptyField
from profiles.models import make_pair_key


class CriteriaMode(models.TextChoices):
    NONE = 'none', _('No criteria')
    MATCHED = 'matched', _('Criteria generated for the pair')
    SHUFFLED = 'shuffled', _('Criteria of another pair')


@dataclass(frozen=True)
class CriteriaDocument:
    """وثيقة معايير الترتيب لزوج (مرض، علاج)"""

    criteria_id: str
    disease: str
    treatment: str
    text: str
    generator_model: str
    exemplar_id: Optional[str] = None
    created_at: str = ''
    prompt_version: str = ''

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise EmptyField(f"Criteria {self.criteria_id} has no text")

    @property
    def pair_key(self) -> str:
        return make_pair_key(self.disease, self.treatment)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['pair_key'] = self.pair_key
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'CriteriaDocument':
        fields = {name: data.get(name) for name in cls.__dataclass_fields__}
        fields['exemplar_id'] = fields['exemplar_id'] or None
        fields['created_at'] = fields['created_at'] or ''
        fields['prompt_version'] = fields['prompt_version'] or ''
        return cls(**fields)


@dataclass(frozen=True)
class Rationale:
    query_id: str
    doctor_id: str
    predicted_label: str
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise EmptyField(f"Rationale for {self.query_id}/{self.doctor_id} has no text")

    def to_dict(self) -> dict:
        return asdict(self)
