"""
خدمات التقييم وتحليل العدالة
Run evaluation, disease-level fairness spread, prefix perturbation and
score distributions per true label.
"""
import logging
from itertools import combinations
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.exceptions import InsufficientStratum
from core.utils import derive_seed, file_digest
from evaluation.metrics import ndcg_at_k, recall_at_k
from evaluation.models import EvalReport, FairnessMode, FairnessReport, GainMode, RecallMode, metric_name
from profiles.models import MedicalQuery, RankedList
from profiles.services import load_qrels
from scoring.runs import RunRow, read_run

logger = logging.getLogger(__name__)

# (doctor_id, true_label, model_score)
GroupEntry = Tuple[str, int, float]


def evaluate_rankings(
    rankings: Mapping[str, Sequence[str]],
    qrels: Mapping[str, Mapping[str, int]],
    ks: Sequence[int] = (10,),
    gain_mode: str = GainMode.EXPONENTIAL,
    recall_mode: str = RecallMode.STANDARD,
) -> Tuple[Dict[str, Dict[str, float]], Dict[str, float], List[str]]:
    """Per-query metrics, macro means and the query ids skipped for lack of judgments."""
    per_query: Dict[str, Dict[str, float]] = {}
    skipped = []
    for query_id in sorted(rankings):
        judged = qrels.get(query_id)
        if not judged:
            logger.warning(f"Query {query_id} has no judgments; skipped")
            skipped.append(query_id)
            continue
        ranking = list(rankings[query_id])
        unknown = sum(1 for doctor_id in ranking if doctor_id not in judged)
        if unknown:
            logger.warning(f"Query {query_id}: {unknown} ranked doctors are unjudged and count as relevance 0")
        values = {}
        for k in ks:
            values[metric_name('ndcg', k)] = ndcg_at_k(ranking, judged, k, gain_mode)
            values[metric_name('recall', k)] = recall_at_k(ranking, judged, k, recall_mode)
        per_query[query_id] = values

    macro = {}
    if per_query:
        names = next(iter(per_query.values())).keys()
        for name in names:
            macro[name] = float(np.mean([values[name] for values in per_query.values()]))
    return per_query, macro, skipped


def evaluate_run(
    run_path,
    qrels_path,
    ks: Sequence[int] = (10,),
    gain_mode: str = GainMode.EXPONENTIAL,
    recall_mode: str = RecallMode.STANDARD,
) -> EvalReport:
    """
    تقييم ملف تشغيل مقابل أحكام الصلة

    A pure function of the two files and the parameters: no tie-breaking is
    applied, rows are read in rank order.
    """
    if not ks or any(k < 1 for k in ks):
        raise ValueError('every k must be at least 1')
    runs = read_run(run_path)
    qrels = load_qrels(qrels_path)
    rankings = {query_id: [row.doctor_id for row in rows] for query_id, rows in runs.items()}
    per_query, macro, skipped = evaluate_rankings(rankings, qrels, ks, gain_mode, recall_mode)
    tags = sorted({row.tag for rows in runs.values() for row in rows})
    metadata = {
        'run_tag': tags[0] if len(tags) == 1 else tags,
        'run_path': str(run_path),
        'run_digest': file_digest(run_path),
        'qrels_path': str(qrels_path),
        'qrels_digest': file_digest(qrels_path),
        'ks': list(ks),
        'gain_mode': str(gain_mode),
        'recall_mode': str(recall_mode),
        'queries_evaluated': len(per_query),
    }
    logger.info(f"Evaluated {len(per_query)} queries from {run_path}: {macro}")
    return EvalReport(per_query=per_query, macro=macro, metadata=metadata, skipped_queries=skipped)


def group_by_disease(
    runs: Mapping[str, Sequence[RunRow]],
    qrels: Mapping[str, Mapping[str, int]],
    queries: Mapping[str, MedicalQuery],
) -> Dict[str, List[GroupEntry]]:
    """
    Collects (doctor_id, true_label, model_score) per disease.

    A doctor judged under several treatments of one disease keeps the
    judgment of the lowest query_id, so no doctor appears twice in a group.
    """
    grouped: Dict[str, Dict[str, GroupEntry]] = {}
    for query_id in sorted(runs):
        query = queries.get(query_id)
        judged = qrels.get(query_id, {})
        if query is None:
            logger.warning(f"Run query {query_id} is not in the query set; skipped")
            continue
        group = grouped.setdefault(query.disease, {})
        for row in runs[query_id]:
            if row.doctor_id in judged and row.doctor_id not in group:
                group[row.doctor_id] = (row.doctor_id, judged[row.doctor_id], row.score)
    return {disease: list(entries.values()) for disease, entries in grouped.items()}


def _ranked_ids(entries: Iterable[GroupEntry]) -> List[str]:
    return [doctor_id for doctor_id, _, _ in sorted(entries, key=lambda e: (-e[2], e[0]))]


def fairness_disease_sd(
    grouped: Mapping[str, Sequence[GroupEntry]],
    repeats: int = 1000,
    per_label: int = 5,
    label_levels: Sequence[int] = (1, 2, 3, 4, 5),
    seed: int = 0,
    gain_mode: str = GainMode.EXPONENTIAL,
    metric: Optional[Callable[[str, Sequence[GroupEntry]], float]] = None,
) -> FairnessReport:
    """
    تحليل تباين الأداء بين الأمراض

    Each repeat samples per_label doctors at every level of every disease
    without replacement, ranks the sample by model score and scores it with
    NDCG@10; the population standard deviation across diseases is averaged
    over repeats. metric(disease, sample) replaces NDCG@10 when given.
    """
    if repeats < 1:
        raise ValueError('repeats must be at least 1')

    strata: Dict[str, Dict[int, List[GroupEntry]]] = {}
    for disease in sorted(grouped):
        by_level = {}
        for level in label_levels:
            members = sorted((e for e in grouped[disease] if e[1] == level), key=lambda e: e[0])
            if len(members) < per_label:
                raise InsufficientStratum(disease, level, len(members), per_label)
            by_level[level] = members
        strata[disease] = by_level

    if metric is None:
        def metric(disease, sample):
            labels = {doctor_id: label for doctor_id, label, _ in sample}
            return ndcg_at_k(_ranked_ids(sample), labels, 10, gain_mode)

    diseases = list(strata)
    sds = []
    totals = dict.fromkeys(diseases, 0.0)
    for repeat in range(repeats):
        rng = np.random.default_rng(derive_seed(seed, 'fairness', repeat))
        values = []
        for disease in diseases:
            sample = []
            for level in label_levels:
                members = strata[disease][level]
                picks = rng.choice(len(members), size=per_label, replace=False)
                sample.extend(members[i] for i in sorted(picks))
            value = metric(disease, sample)
            totals[disease] += value
            values.append(value)
        sds.append(float(np.std(values)))

    report = FairnessReport(
        mode=FairnessMode.DISEASE_SD,
        mean_sd=float(np.mean(sds)),
        repeats=repeats,
        per_label=per_label,
        label_levels=tuple(label_levels),
        seed=seed,
        per_disease_mean={disease: totals[disease] / repeats for disease in diseases},
        metadata={'diseases': len(diseases), 'gain_mode': str(gain_mode)},
    )
    logger.info(f"Disease SD over {len(diseases)} diseases and {repeats} repeats: {report.mean_sd:.4f}")
    return report


def fairness_perturbation(
    queries: Sequence[MedicalQuery],
    variants: Sequence[str],
    ranker: Callable[[List[MedicalQuery]], Mapping[str, RankedList]],
    qrels: Mapping[str, Mapping[str, int]],
    gain_mode: str = GainMode.EXPONENTIAL,
) -> FairnessReport:
    """
    اختبار الحساسية لبادئة الاستعلام

    ranker receives the re-rendered queries of one variant and returns a
    RankedList per query_id.
    """
    if len(variants) < 2:
        raise ValueError('perturbation needs at least 2 variants')
    variant_ndcg: Dict[str, float] = {}
    for variant in variants:
        rendered = [query.with_prefix(variant) for query in queries]
        ranked = ranker(rendered)
        rankings = {query_id: list(ranked_list.doctor_ids) for query_id, ranked_list in ranked.items()}
        _, macro, _ = evaluate_rankings(rankings, qrels, (10,), gain_mode)
        variant_ndcg[variant] = macro.get(metric_name('ndcg', 10), 0.0)
        logger.info(f"Variant {variant!r}: NDCG@10 {variant_ndcg[variant]:.4f}")

    deltas = [(a, b, variant_ndcg[a] - variant_ndcg[b]) for a, b in combinations(variants, 2)]
    return FairnessReport(
        mode=FairnessMode.PERTURBATION,
        variant_ndcg=variant_ndcg,
        deltas=deltas,
        metadata={'queries': len(queries), 'gain_mode': str(gain_mode)},
    )


def score_distribution(runs: Mapping[str, Sequence[RunRow]], qrels: Mapping[str, Mapping[str, int]]) -> pd.DataFrame:
    """count/mean/std/min/max of model scores per true label; std is the population value."""
    records = [
        {'label': qrels[query_id][row.doctor_id], 'score': row.score}
        for query_id, rows in runs.items()
        for row in rows
        if row.doctor_id in qrels.get(query_id, {})
    ]
    df = pd.DataFrame(records, columns=['label', 'score'])
    return df.groupby('label')['score'].agg(
        count='count',
        mean='mean',
        std=lambda scores: float(np.std(scores)),
        min='min',
        max='max',
    )
