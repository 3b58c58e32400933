"""
خدمات التقييم النقطي
Pointwise relevance scoring: label probabilities, score derivation and
independent per-candidate ranking.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import CandidateFailed, MedRankError
from gateway.models import LabelLogits, RequestHints, RequestTask
from gateway.services import BackendGateway
from profiles.models import DoctorProfile, LabelScheme, MedicalQuery, RankedList, ScoredCandidate
from profiles.services import serialize_profile

from .models import FailurePolicy, ScoreStrategy
from .prompts import assemble_ranking_prompt

logger = logging.getLogger(__name__)

LogitsLike = Union[LabelLogits, Sequence[float], np.ndarray]


def _values(logits: LogitsLike) -> np.ndarray:
    values = logits.values if isinstance(logits, LabelLogits) else logits
    return np.asarray(values, dtype=np.float64)


def label_probabilities(logits: LogitsLike) -> np.ndarray:
    """Softmax over label logits with max-subtraction."""
    values = _values(logits)
    weights = np.exp(values - values.max())
    return weights / math.fsum(weights)


def derive_score(logits: LogitsLike, scheme: LabelScheme, strategy: str = ScoreStrategy.SUM) -> float:
    values = _values(logits)
    if len(values) != scheme.size:
        raise MedRankError(f"{len(values)} logits for a scheme of {scheme.size} labels")

    if strategy == ScoreStrategy.MAX_LOGIT:
        return float(values[scheme.top_index])

    weights = np.exp(values - values.max())
    total = math.fsum(weights)
    if strategy == ScoreStrategy.MAX_PROB:
        return float(weights[scheme.top_index] / total)
    if strategy == ScoreStrategy.SUM:
        # sum_k prob_k * s_k, as one ratio so uniform logits give the exact mean
        return math.fsum(w * s for w, s in zip(weights, scheme.scores)) / total
    raise MedRankError(f"Unknown score strategy {strategy!r}")


def predicted_label(logits: LabelLogits) -> str:
    return logits.predicted_label


class PointwiseRanker:
    """
    مُرتِّب نقطي

    Scores every candidate on its own (one logit request each), then sorts
    once all responses are in, so completion order never matters.
    """

    def __init__(
        self,
        gateway: BackendGateway,
        scheme: LabelScheme,
        strategy: str = ScoreStrategy.SUM,
        field_order: Optional[Sequence[str]] = None,
        profile_budget: Optional[int] = None,
        failure_policy: str = FailurePolicy.ABORT,
    ):
        self.gateway = gateway
        self.scheme = scheme
        self.strategy = strategy
        self.field_order = field_order
        self.profile_budget = profile_budget
        self.failure_policy = failure_policy
        self.failures: List[CandidateFailed] = []

    def profile_text(self, profile: DoctorProfile) -> str:
        return serialize_profile(profile, self.field_order, self.profile_budget, self.gateway.tokenizer)

    def fetch_logits(self, query: MedicalQuery, profile: DoctorProfile, criteria=None) -> LabelLogits:
        prompt = assemble_ranking_prompt(
            query, self.profile_text(profile), self.scheme, criteria, doctor_id=profile.doctor_id
        )
        hints = RequestHints(task=RequestTask.RANKING.value, query_id=query.query_id, doctor_ids=(profile.doctor_id,))
        return self.gateway.fetch_label_logits(prompt.text, self.scheme, hints)

    def score_candidate(self, query: MedicalQuery, profile: DoctorProfile, criteria=None) -> ScoredCandidate:
        logits = self.fetch_logits(query, profile, criteria)
        probs = label_probabilities(logits)
        return ScoredCandidate(
            doctor_id=profile.doctor_id,
            score=derive_score(logits, self.scheme, self.strategy),
            label_probs=tuple(float(p) for p in probs),
            predicted_label=logits.predicted_label,
            logits=logits.values,
            provenance=logits.provenance,
        )

    def _score_or_fail(self, query, profile, criteria) -> Tuple[DoctorProfile, Optional[ScoredCandidate], Optional[Exception]]:
        try:
            return profile, self.score_candidate(query, profile, criteria), None
        except MedRankError as e:
            return profile, None, e

    def rank(self, query: MedicalQuery, candidates: Sequence[DoctorProfile], criteria=None) -> RankedList:
        ids = [profile.doctor_id for profile in candidates]
        if len(set(ids)) != len(ids):
            raise MedRankError(f"Duplicate candidate ids for query {query.query_id}")
        if not candidates:
            return RankedList(query.query_id, ())

        workers = min(self.gateway.config.max_in_flight, len(candidates))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda p: self._score_or_fail(query, p, criteria), candidates))

        scored = []
        for profile, candidate, error in outcomes:
            if error is None:
                scored.append(candidate)
                continue
            failure = CandidateFailed(query.query_id, profile.doctor_id, error)
            if self.failure_policy == FailurePolicy.ABORT:
                raise failure from error
            logger.error(f"Excluding {profile.doctor_id} from {query.query_id}: {error}")
            self.failures.append(failure)
        return RankedList.from_candidates(query.query_id, scored)


def rank_pointwise(
    query: MedicalQuery,
    candidates: Sequence[DoctorProfile],
    scheme: LabelScheme,
    strategy: str,
    gateway: BackendGateway,
    criteria=None,
    **options,
) -> RankedList:
    return PointwiseRanker(gateway, scheme, strategy, **options).rank(query, candidates, criteria)
