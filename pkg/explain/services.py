"""
خدمات توليد المعايير والتبريرات
Criteria generation (multi-candidate and one-shot), cross-pair shuffling
and post-hoc rationale generation.
"""
import logging
from datetime import datetime, timezone
from typing import Dict, List, Mapping, Optional

import numpy as np

from core.exceptions import BackendProtocolError, TooFewPairs
from core.utils import canonical_json, derive_seed, get_setting, sha256_text
from explain.models import CriteriaDocument, Rationale
from explain.prompts import render_criteria_prompt, render_oneshot_prompt, render_rationale_prompt
from gateway.models import FinishReason, LabelLogits, RequestHints, RequestTask
from gateway.services import BackendGateway
from profiles.models import LabelScheme, MedicalQuery, make_pair_key

logger = logging.getLogger(__name__)


def criteria_id_for(pair_key: str, generator_model: str, prompt_version: str, index: int, exemplar_id: Optional[str] = None) -> str:
    material = canonical_json([pair_key, generator_model, prompt_version, index, exemplar_id])
    return f"crit-{sha256_text(material)[:12]}-{index}"


class CriteriaService:
    """Generates criteria documents through the backend gateway."""

    def __init__(self, gateway: BackendGateway, token_budget: Optional[int] = None):
        self.gateway = gateway
        self.token_budget = token_budget or get_setting('CRITERIA_TOKEN_BUDGET')
        self.prompt_version = get_setting('PROMPT_VERSION')

    def _document(self, disease: str, treatment: str, prompt: str, index: int, exemplar_id: Optional[str] = None) -> CriteriaDocument:
        hints = RequestHints(task=RequestTask.CRITERIA.value, disease=disease, treatment=treatment)
        result = self.gateway.generate_text(prompt, self.token_budget, hints=hints)
        text = result.text.strip()
        if text:
            text = self.gateway.tokenizer.truncate(text, self.token_budget).strip()
        if result.finish_reason == FinishReason.ERROR or not text:
            raise BackendProtocolError(f"Empty criteria generation for {make_pair_key(disease, treatment)}")
        pair_key = make_pair_key(disease, treatment)
        return CriteriaDocument(
            criteria_id=criteria_id_for(pair_key, self.gateway.identity, self.prompt_version, index, exemplar_id),
            disease=disease,
            treatment=treatment,
            text=text,
            generator_model=self.gateway.identity,
            exemplar_id=exemplar_id,
            created_at=datetime.now(timezone.utc).isoformat(timespec='seconds'),
            prompt_version=self.prompt_version,
        )

    def generate_candidates(self, disease: str, treatment: str, n: int) -> List[CriteriaDocument]:
        """n documents in generation order; each draft is its own request."""
        if n < 1:
            raise ValueError('n must be at least 1')
        documents = []
        for index in range(n):
            prompt = render_criteria_prompt(disease, treatment, draft=index + 1)
            documents.append(self._document(disease, treatment, prompt, index))
        logger.info(f"Generated {n} criteria candidates for {make_pair_key(disease, treatment)}")
        return documents

    def generate_oneshot(self, disease: str, treatment: str, exemplar: CriteriaDocument) -> CriteriaDocument:
        prompt = render_oneshot_prompt(disease, treatment, exemplar)
        document = self._document(disease, treatment, prompt, 0, exemplar_id=exemplar.criteria_id)
        logger.info(f"Generated one-shot criteria for {document.pair_key} from exemplar {exemplar.criteria_id}")
        return document


def generate_criteria_candidates(disease: str, treatment: str, n: int, gateway: BackendGateway) -> List[CriteriaDocument]:
    return CriteriaService(gateway).generate_candidates(disease, treatment, n)


def generate_criteria_oneshot(disease: str, treatment: str, exemplar: CriteriaDocument, gateway: BackendGateway) -> CriteriaDocument:
    return CriteriaService(gateway).generate_oneshot(disease, treatment, exemplar)


def shuffle_criteria_assignment(assignment: Mapping[str, CriteriaDocument], seed: int) -> Dict[str, CriteriaDocument]:
    """
    خلط المعايير بين الأزواج

    Sattolo's algorithm over the sorted pair keys: the result is a single
    cycle, so no pair keeps its own document. Same seed, same mapping.
    """
    keys = sorted(assignment)
    if len(keys) < 2:
        raise TooFewPairs(f"Shuffling needs at least 2 pairs, got {len(keys)}")
    rng = np.random.default_rng(derive_seed(seed, 'criteria-shuffle'))
    order = list(range(len(keys)))
    for i in range(len(order) - 1, 0, -1):
        j = int(rng.integers(0, i))
        order[i], order[j] = order[j], order[i]
    return {key: assignment[keys[order[position]]] for position, key in enumerate(keys)}


def generate_rationale(
    query: MedicalQuery,
    profile_text: str,
    logits: LabelLogits,
    scheme: LabelScheme,
    gateway: BackendGateway,
    criteria: Optional[CriteriaDocument] = None,
    doctor_id: str = '',
    token_budget: Optional[int] = None,
) -> Rationale:
    """
    توليد تبرير لتسمية محسوبة مسبقاً

    The predicted label comes from logits already fetched during ranking;
    only one text-generation request is made.
    """
    budget = token_budget or get_setting('RATIONALE_TOKEN_BUDGET')
    label = logits.predicted_label
    prompt = render_rationale_prompt(query, profile_text, scheme, label, criteria, doctor_id=doctor_id)
    hints = RequestHints(
        task=RequestTask.RATIONALE.value,
        query_id=query.query_id,
        doctor_ids=(doctor_id,),
        disease=query.disease,
        treatment=query.treatment,
        label=label,
    )
    result = gateway.generate_text(prompt, budget, hints=hints)
    if result.finish_reason == FinishReason.ERROR:
        raise BackendProtocolError(f"Rationale generation failed for {query.query_id}/{doctor_id}")
    text = gateway.tokenizer.truncate('1.' + result.text, budget)
    return Rationale(query_id=query.query_id, doctor_id=doctor_id, predicted_label=label, text=text)
