"""
نماذج تقارير التقييم والعدالة
Evaluation and fairness reports with JSON, text and Excel renderings.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from django.db import models
from django.utils.translation import gettext_lazy as _

from core.utils import atomic_write_json


class GainMode(models.TextChoices):
    EXPONENTIAL = 'exponential', _('2^r - 1')
    LINEAR = 'linear', _('r')


class RecallMode(models.TextChoices):
    STANDARD = 'standard', _('Relevant retrieved over all relevant')
    CAPPED = 'capped', _('Relevant retrieved over min(k, relevant)')


class FairnessMode(models.TextChoices):
    DISEASE_SD = 'disease_sd', _('Spread of NDCG across diseases')
    PERTURBATION = 'perturbation', _('Sensitive prefix perturbation')


def metric_name(metric: str, k: int) -> str:
    return f"{metric}@{k}"


@dataclass
class EvalReport:
    """
    تقرير تقييم ملف تشغيل

    per_query maps query_id -> {"ndcg@10": ..., "recall@10": ...}; macro holds
    the arithmetic mean of every metric over the evaluated queries.
    """

    per_query: Dict[str, Dict[str, float]]
    macro: Dict[str, float]
    metadata: Dict[str, object] = field(default_factory=dict)
    skipped_queries: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'metadata': self.metadata,
            'macro': self.macro,
            'per_query': self.per_query,
            'skipped_queries': self.skipped_queries,
        }

    def to_dataframe(self) -> pd.DataFrame:
        df = pd.DataFrame.from_dict(self.per_query, orient='index')
        df.index.name = 'query_id'
        return df.sort_index()

    def to_text(self) -> str:
        summary = pd.DataFrame({'metric': list(self.macro), 'macro': list(self.macro.values())})
        lines = [
            f"run: {self.metadata.get('run_tag', '')}",
            f"queries: {len(self.per_query)} evaluated, {len(self.skipped_queries)} skipped",
            f"gain: {self.metadata.get('gain_mode')}  recall: {self.metadata.get('recall_mode')}",
            '',
            summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"),
        ]
        return '\n'.join(lines) + '\n'

    def write_json(self, path) -> Path:
        return atomic_write_json(path, self.to_dict())

    def write_excel(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with pd.ExcelWriter(path, engine='openpyxl') as writer:
            summary = pd.DataFrame({'metric': list(self.macro), 'value': list(self.macro.values())})
            summary.to_excel(writer, index=False, sheet_name='Summary')
            self.to_dataframe().to_excel(writer, sheet_name='Per query')
            metadata = pd.DataFrame({
                'key': list(self.metadata),
                'value': [str(value) for value in self.metadata.values()],
            })
            metadata.to_excel(writer, index=False, sheet_name='Metadata')
        return path


@dataclass
class FairnessReport:
    mode: str
    # disease_sd
    mean_sd: Optional[float] = None
    repeats: int = 0
    per_label: int = 0
    label_levels: Tuple[int, ...] = ()
    seed: Optional[int] = None
    per_disease_mean: Dict[str, float] = field(default_factory=dict)
    # perturbation
    variant_ndcg: Dict[str, float] = field(default_factory=dict)
    deltas: List[Tuple[str, str, float]] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode == FairnessMode.DISEASE_SD and self.repeats < 1:
            raise ValueError('repeats must be at least 1')
        if self.mode == FairnessMode.PERTURBATION and len(self.variant_ndcg) < 2:
            raise ValueError('perturbation needs at least 2 variants')

    def to_dict(self) -> dict:
        data = {'mode': str(self.mode), 'metadata': self.metadata}
        if self.mode == FairnessMode.DISEASE_SD:
            data.update({
                'mean_sd': self.mean_sd,
                'repeats': self.repeats,
                'per_label': self.per_label,
                'label_levels': list(self.label_levels),
                'seed': self.seed,
                'per_disease_mean_ndcg': self.per_disease_mean,
            })
        else:
            data.update({
                'variant_ndcg': self.variant_ndcg,
                'deltas': [{'first': a, 'second': b, 'delta': d} for a, b, d in self.deltas],
            })
        return data

    def to_text(self) -> str:
        if self.mode == FairnessMode.DISEASE_SD:
            table = pd.DataFrame({
                'disease': list(self.per_disease_mean),
                'mean_ndcg@10': list(self.per_disease_mean.values()),
            })
            header = (
                f"disease SD: {self.mean_sd:.4f} over {self.repeats} repeats "
                f"({self.per_label} per label, levels {list(self.label_levels)}, seed {self.seed})"
            )
        else:
            table = pd.DataFrame({
                'variant': list(self.variant_ndcg),
                'ndcg@10': list(self.variant_ndcg.values()),
            })
            deltas = '\n'.join(f"{a!r} - {b!r}: {d:+.4f}" for a, b, d in self.deltas)
            header = f"prefix perturbation, {len(self.variant_ndcg)} variants\n{deltas}"
        return header + '\n\n' + table.to_string(index=False, float_format=lambda v: f"{v:.4f}") + '\n'

    def write_json(self, path) -> Path:
        return atomic_write_json(path, self.to_dict())
