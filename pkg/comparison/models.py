"""
نماذج استراتيجيات المقارنة
Records of the pairwise and listwise baselines.
"""
from dataclasses import dataclass
from typing import Optional

from django.db import models
from django.utils.translation import gettext_lazy as _

from core.exceptions import ConfigError


class PairPreference(models.TextChoices):
    FIRST_BETTER = 'first_better', _('First candidate is more relevant')
    SECOND_BETTER = 'second_better', _('Second candidate is more relevant')
    TIE = 'tie', _('Orders disagree')


@dataclass(frozen=True)
class PairVerdict:
    """
    preference plus the two raw single-order answers; forward is the answer
    for (first, second), backward for (second, first), both as 'A'/'B'/None.
    """

    preference: str
    forward: Optional[str]
    backward: Optional[str]

    def inverted(self) -> 'PairVerdict':
        swap = {
            PairPreference.FIRST_BETTER: PairPreference.SECOND_BETTER,
            PairPreference.SECOND_BETTER: PairPreference.FIRST_BETTER,
            PairPreference.TIE: PairPreference.TIE,
        }
        return PairVerdict(swap[self.preference].value, self.backward, self.forward)


@dataclass(frozen=True)
class WindowPlan:
    window_size: int = 20
    step_size: int = 10
    passes: int = 1

    def __post_init__(self):
        if self.window_size < 1:
            raise ConfigError('window_size', 'must be positive')
        if not 0 < self.step_size <= self.window_size:
            raise ConfigError('step_size', 'must satisfy 0 < step_size <= window_size')
        if self.passes < 1:
            raise ConfigError('passes', 'must be at least 1')

    def describe(self) -> str:
        return f"w{self.window_size}s{self.step_size}p{self.passes}"
