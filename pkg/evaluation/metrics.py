"""
مقاييس الاسترجاع
NDCG@k and Recall@k over an already ordered ranking.
"""
import logging
import math
from typing import Mapping, Sequence

from evaluation.models import GainMode, RecallMode

logger = logging.getLogger(__name__)


def gain(relevance: int, gain_mode: str = GainMode.EXPONENTIAL) -> float:
    if gain_mode == GainMode.LINEAR:
        return float(relevance)
    return float(2 ** relevance - 1)


def dcg(relevances: Sequence[int], k: int, gain_mode: str = GainMode.EXPONENTIAL) -> float:
    return math.fsum(
        gain(rel, gain_mode) / math.log2(position + 1)
        for position, rel in enumerate(relevances[:k], start=1)
    )


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int, gain_mode: str = GainMode.EXPONENTIAL) -> float:
    """Ids missing from qrels count as relevance 0; 0.0 when the ideal DCG is 0."""
    if k < 1:
        raise ValueError('k must be at least 1')
    unknown = [doctor_id for doctor_id in ranking[:k] if doctor_id not in qrels]
    if unknown:
        logger.debug(f"{len(unknown)} ranked ids have no judgment; treated as relevance 0")
    ideal = dcg(sorted(qrels.values(), reverse=True), k, gain_mode)
    if ideal == 0:
        return 0.0
    actual = dcg([qrels.get(doctor_id, 0) for doctor_id in ranking], k, gain_mode)
    return actual / ideal


def recall_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int, mode: str = RecallMode.STANDARD) -> float:
    if k < 1:
        raise ValueError('k must be at least 1')
    relevant = {doctor_id for doctor_id, rel in qrels.items() if rel >= 1}
    if not relevant:
        logger.warning('No judged-relevant documents; recall is 0')
        return 0.0
    hits = len(relevant.intersection(ranking[:k]))
    denominator = min(k, len(relevant)) if mode == RecallMode.CAPPED else len(relevant)
    return hits / denominator
