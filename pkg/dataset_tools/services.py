"""
خدمات أدوات البيانات
Dataset validation, hard-negative mining, synthetic fixtures, review
sheets and corpus statistics.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from core.exceptions import AllFieldsEmpty, CrossPairExhausted, EmptyField, ParseError, PoolExhausted
from core.utils import atomic_write_jsonl, derive_seed, round_half_up
from dataset_tools.models import (
    MinedNegative, MiningParams, NegativeSource, PoolEntry, Severity, ValidationReport
)
from gateway.tokenizers import CharBudgetTokenizer, Tokenizer
from profiles.models import MAX_RELEVANCE, DoctorProfile, GradedJudgment, MedicalQuery
from profiles.services import (
    iter_jsonl, iter_qrels_rows, serialize_profile, write_corpus, write_qrels, write_queries
)

logger = logging.getLogger(__name__)

LENGTH_THRESHOLDS = (1024, 2048, 4096)
REVIEW_SNIPPET_CHARS = 200


# ---------------------------------------------------------------------------
# التحقق من البيانات
# ---------------------------------------------------------------------------

def validate_dataset(corpus_path, queries_path, qrels_path) -> ValidationReport:
    """
    فحص اتساق الملفات

    Reports dangling ids, duplicate judgments, out-of-range relevances and
    empty profiles. Files that do not parse raise ParseError.
    """
    report = ValidationReport()

    doctor_ids: Set[str] = set()
    for line_number, data in iter_jsonl(corpus_path):
        try:
            profile = DoctorProfile.from_dict(data)
        except EmptyField as e:
            raise ParseError(corpus_path, line_number, str(e))
        if profile.doctor_id in doctor_ids:
            report.add(Severity.ERROR, 'duplicate_doctor', f"Doctor {profile.doctor_id} appears twice", corpus_path, line_number)
        doctor_ids.add(profile.doctor_id)
        if profile.is_empty:
            report.add(Severity.WARNING, 'empty_profile', f"Doctor {profile.doctor_id} has no profile text", corpus_path, line_number)

    query_ids: Set[str] = set()
    for line_number, data in iter_jsonl(queries_path):
        query_id = str(data.get('query_id') or '')
        try:
            MedicalQuery.from_dict(data)
        except EmptyField as e:
            report.add(Severity.ERROR, 'empty_query', f"Query {query_id or '?'}: {e}", queries_path, line_number)
        if query_id in query_ids:
            report.add(Severity.ERROR, 'duplicate_query', f"Query {query_id} appears twice", queries_path, line_number)
        query_ids.add(query_id)

    judged: Set[Tuple[str, str]] = set()
    judged_queries: Set[str] = set()
    for line_number, query_id, doctor_id, relevance in iter_qrels_rows(qrels_path):
        if query_id not in query_ids:
            report.add(Severity.ERROR, 'dangling_query', f"Judgment references unknown query {query_id}", qrels_path, line_number)
        if doctor_id not in doctor_ids:
            report.add(Severity.ERROR, 'dangling_doctor', f"Judgment references unknown doctor {doctor_id}", qrels_path, line_number)
        if not 0 <= relevance <= MAX_RELEVANCE:
            report.add(
                Severity.ERROR, 'relevance_out_of_range',
                f"Relevance {relevance} for {query_id}/{doctor_id} outside [0, {MAX_RELEVANCE}]",
                qrels_path, line_number,
            )
        if (query_id, doctor_id) in judged:
            report.add(Severity.ERROR, 'duplicate_judgment', f"{query_id}/{doctor_id} judged twice", qrels_path, line_number)
        judged.add((query_id, doctor_id))
        judged_queries.add(query_id)

    for query_id in sorted(query_ids - judged_queries):
        report.add(Severity.WARNING, 'unjudged_query', f"Query {query_id} has no judgments", queries_path)

    logger.info(f"Validation finished: {len(report.errors)} errors, {len(report.warnings)} warnings")
    return report


# ---------------------------------------------------------------------------
# استخراج العينات السلبية الصعبة
# ---------------------------------------------------------------------------

def mine_hard_negatives(
    pair_key: str,
    positives: Iterable[str],
    pool: Sequence[PoolEntry],
    other_pair_positives: Mapping[str, Sequence[Tuple[str, int]]],
    params: MiningParams,
) -> List[MinedNegative]:
    """
    استخراج عينات سلبية بنسبة 1:1

    Long-enough, non-positive pool entries are taken in descending reranker
    score after dropping the top ceil(fraction) of them; a seeded share of
    the picks is then swapped for high-label positives of other pairs.
    Output: retained pool negatives in score order, then cross-pair ones.
    """
    positives = set(positives)
    ids = [entry.doctor_id for entry in pool]
    if len(ids) != len(set(ids)):
        raise ValueError(f"Pool for {pair_key} lists a doctor twice")

    filtered = [
        entry for entry in pool
        if entry.profile_token_length > params.min_profile_tokens and entry.doctor_id not in positives
    ]
    filtered.sort(key=lambda entry: (-entry.reranker_score, entry.doctor_id))
    excluded = math.ceil(round(params.top_exclude_fraction * len(filtered), 9))
    eligible = filtered[excluded:]

    count = len(positives)
    if len(eligible) < count:
        raise PoolExhausted(
            f"{pair_key}: {len(eligible)} eligible pool negatives for {count} positives "
            f"({excluded} excluded from the top)"
        )
    selected = eligible[:count]

    rng = np.random.default_rng(derive_seed(params.seed, 'mining', pair_key))
    n_replace = round_half_up(params.replacement_fraction * count)
    replaced = set()
    if n_replace:
        replaced = {int(i) for i in rng.choice(count, size=n_replace, replace=False)}
    retained = [entry.doctor_id for index, entry in enumerate(selected) if index not in replaced]

    donors = sorted({
        doctor_id
        for other_key, entries in other_pair_positives.items() if other_key != pair_key
        for doctor_id, label in entries if label >= params.cross_pair_min_label
    } - positives - set(retained))
    if len(donors) < n_replace:
        raise CrossPairExhausted(
            f"{pair_key}: {len(donors)} cross-pair donors with label >= {params.cross_pair_min_label}, "
            f"{n_replace} needed"
        )
    injected = []
    if n_replace:
        injected = [donors[int(i)] for i in rng.choice(len(donors), size=n_replace, replace=False)]

    logger.debug(f"{pair_key}: {len(retained)} pool negatives, {len(injected)} cross-pair negatives")
    return (
        [MinedNegative(doctor_id, NegativeSource.POOL.value) for doctor_id in retained]
        + [MinedNegative(doctor_id, NegativeSource.CROSS_PAIR.value) for doctor_id in injected]
    )


def load_pool(path) -> Dict[str, List[PoolEntry]]:
    """Pool JSONL rows: pair_key, doctor_id, profile_token_length, reranker_score."""
    pool: Dict[str, List[PoolEntry]] = {}
    seen: Set[Tuple[str, str]] = set()
    for line_number, data in iter_jsonl(path):
        try:
            key = (data['pair_key'], str(data['doctor_id']))
            entry = PoolEntry(key[1], int(data['profile_token_length']), float(data['reranker_score']))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(path, line_number, f"bad pool entry: {e}")
        if key in seen:
            raise ParseError(path, line_number, f"{key[1]} listed twice for {key[0]}")
        seen.add(key)
        pool.setdefault(key[0], []).append(entry)
    return pool


def write_pool(path, pool: Mapping[str, Sequence[PoolEntry]]) -> Path:
    rows = [
        {'pair_key': pair_key, **entry.to_dict()}
        for pair_key in sorted(pool)
        for entry in pool[pair_key]
    ]
    return atomic_write_jsonl(path, rows)


def write_mined_negatives(path, mined: Mapping[str, Sequence[MinedNegative]], params: MiningParams) -> Path:
    rows = [
        {'pair_key': pair_key, 'doctor_id': negative.doctor_id, 'source': negative.source, 'params': params.to_dict()}
        for pair_key in sorted(mined)
        for negative in mined[pair_key]
    ]
    return atomic_write_jsonl(path, rows)


def write_review_sheet(path, negatives: Mapping[str, Sequence[MinedNegative]], corpus: Mapping[str, DoctorProfile]) -> Path:
    """CSV of mined negatives with a short profile snippet for manual review."""
    records = []
    for pair_key in sorted(negatives):
        for negative in negatives[pair_key]:
            profile = corpus.get(negative.doctor_id)
            snippet = ''
            if profile is not None and not profile.is_empty:
                snippet = serialize_profile(profile).replace('\n', ' | ')[:REVIEW_SNIPPET_CHARS]
            records.append({
                'pair_key': pair_key,
                'doctor_id': negative.doctor_id,
                'source': negative.source,
                'snippet': snippet,
            })
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(records, columns=['pair_key', 'doctor_id', 'source', 'snippet']).to_csv(path, index=False)
    return path


# ---------------------------------------------------------------------------
# بيانات اصطناعية للاختبار
# ---------------------------------------------------------------------------

DISEASES = (
    ('lung cancer', 'Thoracic Surgery'),
    ('breast cancer', 'Breast Surgery'),
    ('gastric cancer', 'Gastrointestinal Surgery'),
    ('colorectal cancer', 'Colorectal Surgery'),
    ('liver cancer', 'Hepatobiliary Surgery'),
    ('thyroid nodules', 'Thyroid Surgery'),
    ('coronary heart disease', 'Cardiology'),
    ('atrial fibrillation', 'Cardiac Electrophysiology'),
    ('hypertension', 'Cardiology'),
    ('type 2 diabetes', 'Endocrinology'),
    ('rheumatoid arthritis', 'Rheumatology'),
    ('lumbar disc herniation', 'Spine Surgery'),
    ('knee osteoarthritis', 'Orthopedics'),
    ('cataract', 'Ophthalmology'),
    ('glaucoma', 'Ophthalmology'),
    ('kidney stones', 'Urology'),
    ('epilepsy', 'Neurology'),
    ('parkinson disease', 'Neurology'),
    ('asthma', 'Respiratory Medicine'),
)
TREATMENTS = ('surgical treatment', 'drug therapy')
TITLES = (
    'Resident Physician', 'Attending Physician', 'Attending Physician',
    'Associate Chief Physician', 'Chief Physician', 'Chief Physician',
)
HOSPITALS = (
    'City Community Hospital', 'County General Hospital', 'Provincial Hospital',
    'University Affiliated Hospital', 'National Medical Center', 'National Medical Center',
)
UNRELATED_FIELDS = ('dermatology', 'pediatric dentistry', 'sports medicine', 'audiology', 'nutrition counselling')


@dataclass
class SyntheticFixture:
    corpus: List[DoctorProfile] = field(default_factory=list)
    queries: List[MedicalQuery] = field(default_factory=list)
    qrels: List[GradedJudgment] = field(default_factory=list)
    pool: Dict[str, List[PoolEntry]] = field(default_factory=dict)

    def qrels_by_query(self) -> Dict[str, Dict[str, int]]:
        grouped: Dict[str, Dict[str, int]] = {}
        for judgment in self.qrels:
            grouped.setdefault(judgment.query_id, {})[judgment.doctor_id] = judgment.relevance
        return grouped


def _synthetic_profile(doctor_id: str, level: int, disease: str, treatment: str, department: str, rng) -> DoctorProfile:
    unrelated = UNRELATED_FIELDS[int(rng.integers(len(UNRELATED_FIELDS)))]
    years = 3 + 4 * level + int(rng.integers(4))
    expertise = {
        5: f"Specializes in {treatment} for {disease}; has led more than {100 + 50 * int(rng.integers(10))} such cases.",
        4: f"Extensive experience with {treatment} for {disease} and related conditions.",
        3: f"Diagnosis and {treatment} of {disease} among other {department} conditions.",
        2: f"General management of {department} conditions, including {disease}.",
        1: f"Refers patients with {disease} to specialists; focuses on {unrelated}.",
    }.get(level, f"Focuses on {unrelated}.")
    return DoctorProfile(
        doctor_id=doctor_id,
        title=TITLES[min(level, len(TITLES) - 1)],
        specialty=department if level >= 2 else unrelated.title(),
        affiliation=HOSPITALS[min(level, len(HOSPITALS) - 1)],
        department=department if level >= 2 else 'General Outpatient Clinic',
        introduction=f"Doctor {doctor_id} has practised medicine for {years} years.",
        expertise=expertise,
        social_service=f"Member of the {disease} specialty committee." if level >= 3 else '',
        awards=f"Regional award for clinical excellence in {disease}." if level >= 4 else '',
        research=(
            f"Published {2 * level + int(rng.integers(5))} papers on {treatment} for {disease}." if level >= 3
            else f"Published work on {unrelated}." if level >= 1 else ''
        ),
    )


def generate_synthetic_fixture(
    seed: int,
    n_queries: int = 38,
    docs_per_query: int = 114,
    label_levels: Sequence[int] = (0, 1, 2, 3, 4, 5),
) -> SyntheticFixture:
    """
    توليد بيانات اصطناعية حتمية

    Every query gets its own balanced set of judged doctors whose profile
    text grows more relevant with the label. The pool adds twice as many
    doctors of other queries.
    """
    levels = sorted(set(int(level) for level in label_levels))
    if n_queries < 1:
        raise ValueError('n_queries must be at least 1')
    if docs_per_query < len(levels):
        raise ValueError(f"docs_per_query must be at least {len(levels)} to cover every label level")
    if levels[0] < 0 or levels[-1] > MAX_RELEVANCE:
        raise ValueError(f"label levels must lie in [0, {MAX_RELEVANCE}]")

    rng = np.random.default_rng(derive_seed(seed, 'fixture'))
    pairs = list(product(DISEASES, TREATMENTS))
    order = [int(i) for i in rng.permutation(len(pairs))]
    fixture = SyntheticFixture()
    lengths: Dict[str, int] = {}
    judged_by_query: List[List[Tuple[str, int]]] = []

    base, remainder = divmod(docs_per_query, len(levels))
    strata = [level for index, level in enumerate(levels) for _ in range(base + (1 if index < remainder else 0))]
    counter = 0
    for index in range(n_queries):
        (disease, department), treatment = pairs[order[index % len(pairs)]]
        if index >= len(pairs):
            disease = f"{disease} cohort {index // len(pairs) + 1}"
        query = MedicalQuery(query_id=f"q{index + 1:03d}", disease=disease, treatment=treatment)
        fixture.queries.append(query)

        judged = []
        for level in rng.permutation(strata):
            counter += 1
            doctor_id = f"d{counter:05d}"
            fixture.corpus.append(_synthetic_profile(doctor_id, int(level), disease, treatment, department, rng))
            fixture.qrels.append(GradedJudgment(query.query_id, doctor_id, int(level)))
            lengths[doctor_id] = int(rng.lognormal(mean=math.log(1500), sigma=0.25))
            judged.append((doctor_id, int(level)))
        judged_by_query.append(judged)

    all_ids = [profile.doctor_id for profile in fixture.corpus]
    for query, judged in zip(fixture.queries, judged_by_query):
        own = {doctor_id for doctor_id, _ in judged}
        others = [doctor_id for doctor_id in all_ids if doctor_id not in own]
        entries = [
            PoolEntry(doctor_id, lengths[doctor_id], round(float(level + rng.normal(0.0, 0.75)), 4))
            for doctor_id, level in judged
        ]
        size = min(2 * docs_per_query, len(others))
        for i in sorted(int(i) for i in rng.choice(len(others), size=size, replace=False)):
            doctor_id = others[i]
            entries.append(PoolEntry(doctor_id, lengths[doctor_id], round(float(rng.normal(0.5, 0.75)), 4)))
        fixture.pool[query.pair_key] = entries

    logger.info(
        f"Synthetic fixture: {len(fixture.queries)} queries, {len(fixture.corpus)} doctors, "
        f"{len(fixture.qrels)} judgments"
    )
    return fixture


def write_fixture(directory, fixture: SyntheticFixture) -> Dict[str, Path]:
    directory = Path(directory)
    paths = {
        'corpus': directory / 'corpus.jsonl',
        'queries': directory / 'queries.jsonl',
        'qrels': directory / 'qrels.txt',
        'pool': directory / 'pool.jsonl',
    }
    write_corpus(paths['corpus'], fixture.corpus)
    write_queries(paths['queries'], fixture.queries)
    write_qrels(paths['qrels'], fixture.qrels)
    write_pool(paths['pool'], fixture.pool)
    return paths


# ---------------------------------------------------------------------------
# إحصاءات
# ---------------------------------------------------------------------------

def dataset_statistics(
    corpus: Mapping[str, DoctorProfile],
    queries: Mapping[str, MedicalQuery],
    qrels: Mapping[str, Mapping[str, int]],
    tokenizer: Optional[Tokenizer] = None,
) -> dict:
    """Judgment counts, label histograms and the share of profiles within each length threshold."""
    records = [
        {'query_id': query_id, 'doctor_id': doctor_id, 'label': label}
        for query_id, judged in qrels.items()
        for doctor_id, label in judged.items()
    ]
    df = pd.DataFrame(records, columns=['query_id', 'doctor_id', 'label'])
    per_query = df.groupby('query_id').size()
    histogram = df.groupby(['query_id', 'label']).size().unstack(fill_value=0)
    tokenizer = tokenizer or CharBudgetTokenizer()

    lengths = []
    for profile in corpus.values():
        if profile.is_empty:
            continue
        try:
            text = serialize_profile(profile, token_budget=10 ** 9, tokenizer=tokenizer)
        except AllFieldsEmpty:
            continue
        lengths.append(tokenizer.count(text))
    lengths = np.array(lengths, dtype=float)

    return {
        'queries': len(queries),
        'doctors': len(corpus),
        'judgments': int(len(df)),
        'judgments_per_query': {
            'mean': float(per_query.mean()) if len(per_query) else 0.0,
            'min': int(per_query.min()) if len(per_query) else 0,
            'max': int(per_query.max()) if len(per_query) else 0,
        },
        'label_histogram': {int(label): int(n) for label, n in df['label'].value_counts().sort_index().items()},
        'label_histogram_per_query': {
            query_id: {int(label): int(n) for label, n in row.items()}
            for query_id, row in histogram.iterrows()
        },
        'length_coverage': {
            str(limit): float((lengths <= limit).mean()) if lengths.size else 0.0
            for limit in LENGTH_THRESHOLDS
        },
    }
