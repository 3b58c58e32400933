"""
خدمات الترتيب بالمقارنة
Pairwise (heapsort over debiased comparisons) and listwise (back-to-front
sliding window) ranking baselines. Both are sequential within a query.
"""
import logging
import re
from typing import Dict, List, Optional, Sequence, Tuple

from core.exceptions import MedRankError
from gateway.models import RequestHints, RequestTask
from gateway.services import BackendGateway
from profiles.models import DoctorProfile, MedicalQuery, RankedList, ScoredCandidate
from profiles.services import serialize_profile

from .models import PairPreference, PairVerdict, WindowPlan
from .prompts import render_listwise, render_pairwise

logger = logging.getLogger(__name__)

PASSAGE_RE = re.compile(r'Passage\s*([AB])\b', re.IGNORECASE)
BARE_CHOICE_RE = re.compile(r'^\W*([AB])\b')
INDEX_RE = re.compile(r'\d+')


def parse_pair_answer(text: str) -> Optional[str]:
    match = PASSAGE_RE.search(text) or BARE_CHOICE_RE.search(text.strip())
    return match.group(1).upper() if match else None


def parse_permutation(text: str, size: int) -> List[int]:
    """Zero-based indices in the order they appear, unfiltered."""
    return [int(token) - 1 for token in INDEX_RE.findall(text)]


def repair_permutation(indices: Sequence[int], size: int) -> List[int]:
    """
    Drop out-of-range and repeated indices, then append the missing ones in
    their original order. The result is always a permutation of range(size).
    """
    seen = set()
    repaired = []
    for index in indices:
        if 0 <= index < size and index not in seen:
            seen.add(index)
            repaired.append(index)
    repaired.extend(index for index in range(size) if index not in seen)
    return repaired


def synthetic_ranking(query_id: str, ordered: Sequence[DoctorProfile]) -> RankedList:
    """Comparison strategies have no absolute score; rank N - position stands in."""
    total = len(ordered)
    entries = [
        ScoredCandidate(doctor_id=profile.doctor_id, score=float(total - position))
        for position, profile in enumerate(ordered)
    ]
    return RankedList(query_id, tuple(entries))


def _check_unique(query: MedicalQuery, candidates: Sequence[DoctorProfile]):
    ids = [profile.doctor_id for profile in candidates]
    if len(set(ids)) != len(ids):
        raise MedRankError(f"Duplicate candidate ids for query {query.query_id}")


class PairwiseRanker:
    """مقارنة زوجية مع ترتيب الكومة"""

    def __init__(self, gateway: BackendGateway, field_order=None, profile_budget=None, max_new_tokens: int = 8):
        self.gateway = gateway
        self.field_order = field_order
        self.profile_budget = profile_budget
        self.max_new_tokens = max_new_tokens
        self.comparisons = 0
        self._texts: Dict[str, str] = {}

    def _text(self, profile: DoctorProfile) -> str:
        if profile.doctor_id not in self._texts:
            self._texts[profile.doctor_id] = serialize_profile(
                profile, self.field_order, self.profile_budget, self.gateway.tokenizer
            )
        return self._texts[profile.doctor_id]

    def _ask(self, query: MedicalQuery, first: DoctorProfile, second: DoctorProfile) -> Optional[str]:
        prompt = render_pairwise(query.rendered_text, self._text(first), self._text(second))
        hints = RequestHints(
            task=RequestTask.PAIRWISE.value,
            query_id=query.query_id,
            doctor_ids=(first.doctor_id, second.doctor_id),
        )
        result = self.gateway.generate_text(prompt, self.max_new_tokens, hints)
        answer = parse_pair_answer(result.text)
        if answer is None:
            logger.warning(f"Unparseable pairwise answer {result.text[:40]!r} for {query.query_id}")
        return answer

    def compare(self, query: MedicalQuery, doc_a: DoctorProfile, doc_b: DoctorProfile) -> PairVerdict:
        """Ask in both orders; agreement wins, anything else is a tie."""
        if doc_a.doctor_id == doc_b.doctor_id:
            raise MedRankError('Cannot compare a candidate with itself')
        forward = self._ask(query, doc_a, doc_b)
        backward = self._ask(query, doc_b, doc_a)
        self.comparisons += 1

        if forward == 'A' and backward == 'B':
            preference = PairPreference.FIRST_BETTER
        elif forward == 'B' and backward == 'A':
            preference = PairPreference.SECOND_BETTER
        else:
            preference = PairPreference.TIE
        return PairVerdict(preference.value, forward, backward)

    def rank(self, query: MedicalQuery, candidates: Sequence[DoctorProfile]) -> RankedList:
        _check_unique(query, candidates)
        memo: Dict[Tuple[str, str], PairVerdict] = {}

        def better(a: DoctorProfile, b: DoctorProfile) -> bool:
            key = (a.doctor_id, b.doctor_id)
            if key not in memo:
                verdict = self.compare(query, a, b)
                memo[key] = verdict
                memo[(b.doctor_id, a.doctor_id)] = verdict.inverted()
            preference = memo[key].preference
            if preference == PairPreference.TIE:
                return a.doctor_id < b.doctor_id
            return preference == PairPreference.FIRST_BETTER

        heap = list(candidates)

        def sift_down(root: int, end: int):
            while True:
                child = 2 * root + 1
                if child >= end:
                    return
                if child + 1 < end and better(heap[child + 1], heap[child]):
                    child += 1
                if not better(heap[child], heap[root]):
                    return
                heap[root], heap[child] = heap[child], heap[root]
                root = child

        size = len(heap)
        for start in range(size // 2 - 1, -1, -1):
            sift_down(start, size)
        for end in range(size - 1, 0, -1):
            heap[0], heap[end] = heap[end], heap[0]
            sift_down(0, end)

        # the heap now holds candidates from least to most relevant
        heap.reverse()
        logger.info(f"Pairwise ranking of {query.query_id}: {size} candidates, {len(memo) // 2} comparisons")
        return synthetic_ranking(query.query_id, heap)


class ListwiseRanker:
    """نافذة منزلقة من الخلف إلى الأمام"""

    def __init__(self, gateway: BackendGateway, plan: Optional[WindowPlan] = None, field_order=None, profile_budget=None):
        self.gateway = gateway
        self.plan = plan or WindowPlan()
        self.field_order = field_order
        self.profile_budget = profile_budget
        self.windows = 0
        self.repairs = 0

    def _permute(self, query: MedicalQuery, window: Sequence[DoctorProfile]) -> List[int]:
        texts = [
            serialize_profile(profile, self.field_order, self.profile_budget, self.gateway.tokenizer)
            for profile in window
        ]
        prompt = render_listwise(query.rendered_text, texts)
        hints = RequestHints(
            task=RequestTask.LISTWISE.value,
            query_id=query.query_id,
            doctor_ids=tuple(profile.doctor_id for profile in window),
        )
        result = self.gateway.generate_text(prompt, 8 * len(window) + 16, hints)
        self.windows += 1
        raw = parse_permutation(result.text, len(window))
        permutation = repair_permutation(raw, len(window))
        if raw != permutation:
            self.repairs += 1
            logger.warning(f"Repaired a malformed permutation for {query.query_id}: {result.text[:60]!r}")
        return permutation

    def rank(self, query: MedicalQuery, candidates: Sequence[DoctorProfile]) -> RankedList:
        _check_unique(query, candidates)
        order = list(candidates)
        window_size, step = self.plan.window_size, self.plan.step_size

        for _ in range(self.plan.passes):
            if not order:
                break
            end = len(order)
            start = max(end - window_size, 0)
            while True:
                window = order[start:end]
                permutation = self._permute(query, window)
                order[start:end] = [window[index] for index in permutation]
                if start == 0:
                    break
                end -= step
                start = max(end - window_size, 0)

        return synthetic_ranking(query.query_id, order)


def pairwise_compare(query, doc_a, doc_b, gateway: BackendGateway, **options) -> PairVerdict:
    return PairwiseRanker(gateway, **options).compare(query, doc_a, doc_b)


def rank_pairwise_heapsort(query, candidates, gateway: BackendGateway, **options) -> RankedList:
    return PairwiseRanker(gateway, **options).rank(query, candidates)


def rank_listwise_sliding(query, candidates, plan: WindowPlan, gateway: BackendGateway, **options) -> RankedList:
    return ListwiseRanker(gateway, plan, **options).rank(query, candidates)
