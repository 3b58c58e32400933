"""
نماذج الأطباء والاستعلامات
Domain records: doctor profiles, medical queries, label schemes and rankings.

All records are immutable; they are plain dataclasses, not ORM models.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional, Tuple

from core.exceptions import EmptyField, InvalidLabelScheme, MedRankError


# الحقول التسعة لملف الطبيب بترتيب العرض الافتراضي
FIELD_DISPLAY_KEYS = {
    'title': 'Title',
    'specialty': 'Specialty',
    'affiliation': 'Affiliation',
    'department': 'Department',
    'introduction': 'Introduction',
    'expertise': 'Expertise',
    'social_service': 'Social Service',
    'awards': 'Awards',
    'research': 'Research',
}
PROFILE_FIELDS = tuple(FIELD_DISPLAY_KEYS)

MAX_RELEVANCE = 5

REDUCED_LABEL_NAMES = {
    5: ('Not Relevant', 'Low', 'Mid', 'High', 'Top'),
    4: ('Not Relevant', 'Low', 'Mid', 'High'),
    3: ('Not Relevant', 'Low', 'High'),
    2: ('Not Relevant', 'High'),
}


@dataclass(frozen=True)
class DoctorProfile:
    """
    ملف الطبيب - the candidate document

    A profile with no text is accepted so corpus loading and validation can
    report it; serialize_profile raises AllFieldsEmpty for it.
    """

    doctor_id: str
    title: str = ''
    specialty: str = ''
    affiliation: str = ''
    department: str = ''
    introduction: str = ''
    expertise: str = ''
    social_service: str = ''
    awards: str = ''
    research: str = ''

    def __post_init__(self):
        if not self.doctor_id or not str(self.doctor_id).strip():
            raise EmptyField('doctor_id must be non-empty')
        for name in PROFILE_FIELDS:
            value = getattr(self, name)
            if value is None:
                object.__setattr__(self, name, '')
            elif not isinstance(value, str):
                object.__setattr__(self, name, str(value))

    @classmethod
    def from_dict(cls, data: dict) -> 'DoctorProfile':
        return cls(
            doctor_id=str(data.get('doctor_id') or ''),
            **{name: data.get(name) or '' for name in PROFILE_FIELDS}
        )

    def to_dict(self) -> dict:
        data = {'doctor_id': self.doctor_id}
        data.update({name: getattr(self, name) for name in PROFILE_FIELDS})
        return data

    @property
    def is_empty(self) -> bool:
        return not any(getattr(self, name).strip() for name in PROFILE_FIELDS)


@dataclass(frozen=True)
class MedicalQuery:
    """استعلام المريض: مرض + علاج"""

    query_id: str
    disease: str
    treatment: str
    sensitive_prefix: Optional[str] = None

    def __post_init__(self):
        if not (self.disease or '').strip():
            raise EmptyField(f"Query {self.query_id}: disease is empty")
        if not (self.treatment or '').strip():
            raise EmptyField(f"Query {self.query_id}: treatment is empty")

    @property
    def rendered_text(self) -> str:
        from .services import render_query
        return render_query(self.disease, self.treatment, self.sensitive_prefix)

    @property
    def pair_key(self) -> str:
        return make_pair_key(self.disease, self.treatment)

    def with_prefix(self, prefix: Optional[str]) -> 'MedicalQuery':
        return replace(self, sensitive_prefix=prefix)

    @classmethod
    def from_dict(cls, data: dict) -> 'MedicalQuery':
        return cls(
            query_id=str(data.get('query_id') or ''),
            disease=data.get('disease') or '',
            treatment=data.get('treatment') or '',
            sensitive_prefix=data.get('sensitive_prefix') or None,
        )

    def to_dict(self) -> dict:
        data = {'query_id': self.query_id, 'disease': self.disease, 'treatment': self.treatment}
        if self.sensitive_prefix:
            data['sensitive_prefix'] = self.sensitive_prefix
        return data


def make_pair_key(disease: str, treatment: str) -> str:
    return f"({disease.strip()}, {treatment.strip()})"


@dataclass(frozen=True)
class LabelScheme:
    """
    سلم التصنيف المتدرج

    Ordered graded labels, least relevant first, each with its numeric score.
    """

    labels: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        labels = tuple((str(name), float(score)) for name, score in self.labels)
        object.__setattr__(self, 'labels', labels)
        if len(labels) not in REDUCED_LABEL_NAMES:
            raise InvalidLabelScheme(f"A scheme needs 2 to 5 labels, got {len(labels)}")
        names = [name for name, _ in labels]
        if len(set(names)) != len(names):
            raise InvalidLabelScheme(f"Duplicate label names in {names}")
        if any(not name.strip() for name in names):
            raise InvalidLabelScheme('Label names must be non-empty')
        scores = [score for _, score in labels]
        if any(b <= a for a, b in zip(scores, scores[1:])):
            raise InvalidLabelScheme(f"Scores must strictly increase, got {scores}")

    @classmethod
    def default(cls) -> 'LabelScheme':
        return cls.reduced(5)

    @classmethod
    def reduced(cls, size: int) -> 'LabelScheme':
        if size not in REDUCED_LABEL_NAMES:
            raise InvalidLabelScheme(f"No ablation scheme with {size} labels")
        return cls.from_names(REDUCED_LABEL_NAMES[size])

    @classmethod
    def from_names(cls, names: Iterable[str]) -> 'LabelScheme':
        # s_k = k
        return cls(tuple((name, float(index)) for index, name in enumerate(names)))

    @classmethod
    def from_dict(cls, data) -> 'LabelScheme':
        if isinstance(data, int):
            return cls.reduced(data)
        if isinstance(data, dict):
            data = data.get('labels', [])
        labels = []
        for item in data:
            if isinstance(item, str):
                return cls.from_names(data)
            if isinstance(item, dict):
                labels.append((item['name'], item['score']))
            else:
                labels.append((item[0], item[1]))
        return cls(tuple(labels))

    def to_dict(self) -> dict:
        return {'labels': [{'name': name, 'score': score} for name, score in self.labels]}

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.labels)

    @property
    def scores(self) -> Tuple[float, ...]:
        return tuple(score for _, score in self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def top_index(self) -> int:
        return len(self.labels) - 1

    @property
    def score_range(self) -> Tuple[float, float]:
        return self.labels[0][1], self.labels[-1][1]

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class GradedJudgment:
    query_id: str
    doctor_id: str
    relevance: int

    def __post_init__(self):
        if not 0 <= int(self.relevance) <= MAX_RELEVANCE:
            raise MedRankError(
                f"Relevance {self.relevance} for {self.query_id}/{self.doctor_id} outside [0, {MAX_RELEVANCE}]"
            )


@dataclass(frozen=True)
class ScoredCandidate:
    doctor_id: str
    score: float
    label_probs: Tuple[float, ...] = ()
    predicted_label: str = ''
    logits: Tuple[float, ...] = ()
    provenance: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'label_probs', tuple(float(p) for p in self.label_probs))
        if self.label_probs:
            if any(p < 0.0 or p > 1.0 for p in self.label_probs):
                raise MedRankError(f"Probabilities of {self.doctor_id} leave [0, 1]")
            if abs(math.fsum(self.label_probs) - 1.0) > 1e-9:
                raise MedRankError(f"Probabilities of {self.doctor_id} do not sum to 1")


@dataclass(frozen=True)
class RankedList:
    """
    قائمة مرتبة

    Entries are ordered by score descending, then doctor_id ascending.
    """

    query_id: str
    entries: Tuple[ScoredCandidate, ...] = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, 'entries', entries)
        ids = [entry.doctor_id for entry in entries]
        if len(set(ids)) != len(ids):
            raise MedRankError(f"Duplicate doctor ids in ranking of {self.query_id}")
        keys = [ranking_key(entry) for entry in entries]
        if keys != sorted(keys):
            raise MedRankError(f"Ranking of {self.query_id} is not in (score desc, doctor_id asc) order")

    @classmethod
    def from_candidates(cls, query_id: str, candidates: Iterable[ScoredCandidate]) -> 'RankedList':
        return cls(query_id, tuple(sorted(candidates, key=ranking_key)))

    @property
    def doctor_ids(self) -> Tuple[str, ...]:
        return tuple(entry.doctor_id for entry in self.entries)

    def by_doctor(self) -> Dict[str, ScoredCandidate]:
        return {entry.doctor_id: entry for entry in self.entries}

    def top(self, k: int) -> Tuple[ScoredCandidate, ...]:
        return self.entries[:k]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def ranking_key(entry: ScoredCandidate):
    # str comparison is by code point, the same order as UTF-8 bytes
    return (-entry.score, entry.doctor_id)
