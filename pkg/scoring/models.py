"""
نماذج التقييم النقطي
Pointwise scoring records.
"""
from dataclasses import dataclass
from typing import Optional

from django.db import models
from django.utils.translation import gettext_lazy as _

ELICITATION_PREFIX = 'The professional relevance of the candidate doctor is '


class ScoreStrategy(models.TextChoices):
    SUM = 'sum', _('Expected label score')
    MAX_LOGIT = 'max_logit', _('Raw logit of the top label')
    MAX_PROB = 'max_prob', _('Probability of the top label')


class FailurePolicy(models.TextChoices):
    ABORT = 'abort', _('Abort the query')
    EXCLUDE = 'exclude', _('Exclude the candidate and continue')


@dataclass(frozen=True)
class RankingPrompt:
    text: str
    query_id: str
    doctor_id: str
    criteria_id: Optional[str] = None

    def __post_init__(self):
        if not self.text.endswith(ELICITATION_PREFIX):
            raise ValueError('A ranking prompt must end with the elicitation prefix')
