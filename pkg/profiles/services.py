"""
خدمات ملفات الأطباء
Profile serialization, query rendering and dataset file IO.
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from core.exceptions import AllFieldsEmpty, EmptyField, ParseError
from core.utils import atomic_write_jsonl, atomic_write_text, get_setting
from gateway.tokenizers import CharBudgetTokenizer, Tokenizer

from .models import FIELD_DISPLAY_KEYS, PROFILE_FIELDS, DoctorProfile, GradedJudgment, MedicalQuery

logger = logging.getLogger(__name__)

QUERY_TEMPLATE = 'I want to find a doctor specializing in {treatment} for {disease}.'


def serialize_profile(
    profile: DoctorProfile,
    field_order: Optional[Sequence[str]] = None,
    token_budget: Optional[int] = None,
    tokenizer: Optional[Tokenizer] = None,
) -> str:
    """
    تحويل ملف الطبيب إلى نص

    One "<DisplayKey>: <value>" line per non-empty field, in field_order,
    cut to the longest prefix that fits token_budget under the tokenizer.
    """
    field_order = tuple(field_order or PROFILE_FIELDS)
    token_budget = token_budget or get_setting('PROFILE_TOKEN_BUDGET')
    if token_budget <= 0:
        raise ValueError('token_budget must be positive')
    unknown = [name for name in field_order if name not in FIELD_DISPLAY_KEYS]
    if unknown:
        raise ValueError(f"Unknown profile fields: {unknown}")

    lines = []
    for name in field_order:
        value = getattr(profile, name).strip()
        if value:
            lines.append(f"{FIELD_DISPLAY_KEYS[name]}: {value}")
    if not lines:
        raise AllFieldsEmpty(f"Doctor {profile.doctor_id} has no text in {list(field_order)}")

    tokenizer = tokenizer or CharBudgetTokenizer()
    return tokenizer.truncate('\n'.join(lines), token_budget)


def render_query(disease: str, treatment: str, sensitive_prefix: Optional[str] = None) -> str:
    disease = (disease or '').strip()
    treatment = (treatment or '').strip()
    if not disease or not treatment:
        raise EmptyField('disease and treatment must be non-empty')
    text = QUERY_TEMPLATE.format(treatment=treatment, disease=disease)
    if sensitive_prefix and sensitive_prefix.strip():
        text = f"{sensitive_prefix.strip()} {text}"
    return text


# ---------------------------------------------------------------------------
# قراءة الملفات وكتابتها
# ---------------------------------------------------------------------------

def iter_jsonl(path) -> Iterator[Tuple[int, dict]]:
    """Yields (line_number, object) for every non-blank line."""
    with open(path, encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(path, line_number, f"invalid JSON ({e.msg})")
            if not isinstance(data, dict):
                raise ParseError(path, line_number, 'expected a JSON object')
            yield line_number, data


def iter_qrels_rows(path) -> Iterator[Tuple[int, str, str, int]]:
    """Yields (line_number, query_id, doctor_id, relevance) without range checks."""
    with open(path, encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError(path, line_number, f"expected 4 columns, got {len(parts)}")
            try:
                relevance = int(parts[3])
            except ValueError:
                raise ParseError(path, line_number, f"relevance {parts[3]!r} is not an integer")
            yield line_number, parts[0], parts[2], relevance


def load_corpus(path) -> Dict[str, DoctorProfile]:
    corpus = {}
    for line_number, data in iter_jsonl(path):
        try:
            profile = DoctorProfile.from_dict(data)
        except EmptyField as e:
            raise ParseError(path, line_number, str(e))
        if profile.doctor_id in corpus:
            raise ParseError(path, line_number, f"duplicate doctor_id {profile.doctor_id}")
        corpus[profile.doctor_id] = profile
    logger.info(f"Loaded {len(corpus)} profiles from {path}")
    return corpus


def load_queries(path) -> Dict[str, MedicalQuery]:
    queries = {}
    for line_number, data in iter_jsonl(path):
        try:
            query = MedicalQuery.from_dict(data)
        except EmptyField as e:
            raise ParseError(path, line_number, str(e))
        if not query.query_id:
            raise ParseError(path, line_number, 'missing query_id')
        if query.query_id in queries:
            raise ParseError(path, line_number, f"duplicate query_id {query.query_id}")
        queries[query.query_id] = query
    return queries


def load_qrels(path) -> Dict[str, Dict[str, int]]:
    qrels: Dict[str, Dict[str, int]] = {}
    for line_number, query_id, doctor_id, relevance in iter_qrels_rows(path):
        try:
            GradedJudgment(query_id, doctor_id, relevance)
        except Exception as e:
            raise ParseError(path, line_number, str(e))
        judged = qrels.setdefault(query_id, {})
        if doctor_id in judged:
            raise ParseError(path, line_number, f"duplicate judgment {query_id}/{doctor_id}")
        judged[doctor_id] = relevance
    return qrels


def write_corpus(path, profiles) -> Path:
    return atomic_write_jsonl(path, [profile.to_dict() for profile in profiles])


def write_queries(path, queries) -> Path:
    return atomic_write_jsonl(path, [query.to_dict() for query in queries])


def write_qrels(path, judgments: List[GradedJudgment]) -> Path:
    lines = [f"{j.query_id} 0 {j.doctor_id} {j.relevance}\n" for j in judgments]
    return atomic_write_text(path, ''.join(lines))
