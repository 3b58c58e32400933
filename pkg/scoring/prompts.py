"""
قالب موجّه الترتيب
Ranking prompt template. Changing the wording requires a new
PROMPT_VERSION so recorded caches and replays stay valid.
"""
from typing import Optional

from core.exceptions import EmptyField
from profiles.models import LabelScheme, MedicalQuery

from .models import ELICITATION_PREFIX, RankingPrompt

RANKING_INSTRUCTION = (
    "You are a medical assistant helping a patient choose a doctor. "
    "Judge the professional relevance of the candidate doctor to the patient's request "
    "using exactly one of the following labels, ordered from least to most relevant: {labels}."
)

CRITERIA_BLOCK = "Ranking criteria:\n{criteria}"

QUERY_BLOCK = "Patient request: {query}"

PROFILE_BLOCK = "Candidate doctor profile:\n{profile}"


def format_labels(scheme: LabelScheme) -> str:
    return ', '.join(f'"{name}"' for name in scheme.names)


def assemble_ranking_prompt(
    query: MedicalQuery,
    profile_text: str,
    scheme: LabelScheme,
    criteria=None,
    doctor_id: str = '',
) -> RankingPrompt:
    """
    Instruction, optional criteria, the rendered query and the profile,
    closed by the elicitation prefix with no trailing newline.
    """
    if not profile_text or not profile_text.strip():
        raise EmptyField('profile_text must be non-empty')

    sections = [RANKING_INSTRUCTION.format(labels=format_labels(scheme))]
    criteria_id: Optional[str] = None
    if criteria is not None:
        sections.append(CRITERIA_BLOCK.format(criteria=criteria.text.strip()))
        criteria_id = criteria.criteria_id
    sections.append(QUERY_BLOCK.format(query=query.rendered_text))
    sections.append(PROFILE_BLOCK.format(profile=profile_text))

    text = '\n\n'.join(sections) + '\n\n' + ELICITATION_PREFIX
    return RankingPrompt(text=text, query_id=query.query_id, doctor_id=doctor_id, criteria_id=criteria_id)
