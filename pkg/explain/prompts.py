"""
قوالب توليد المعايير والتبريرات
Criteria-generation and rationale templates (versioned with PROMPT_VERSION).
"""
from scoring.prompts import assemble_ranking_prompt

EXPLANATION_PREFIX = '.\n\nThe reasons are as follows.\n1.'

CRITERIA_ROLE = (
    'You are an experienced medical expert who helps patients find the right doctor.'
)

CRITERIA_INSTRUCTIONS = (
    'Write a set of ranking criteria for judging how professionally relevant a doctor is '
    'for a patient seeking {treatment} for {disease}. Cover disease-specific clinical experience, '
    'expertise in the treatment, professional title, hospital tier, positions in professional '
    'societies, research accomplishments and honors. Use a numbered list with one criterion per '
    'line, each followed by a short explanation.'
)

CRITERIA_TEMPLATE = (
    '{role}\n\n'
    'Disease: {disease}\n'
    'Treatment: {treatment}\n\n'
    '{instructions}\n\n'
    'Draft {draft}.\n'
    'Ranking criteria:\n'
)

ONESHOT_TEMPLATE = (
    '{role}\n\n'
    'Here is an example of ranking criteria written for another disease-treatment pair.\n\n'
    'Disease: {exemplar_disease}\n'
    'Treatment: {exemplar_treatment}\n'
    'Ranking criteria:\n{exemplar_text}\n\n'
    'Following the same structure and format, write ranking criteria for the pair below.\n\n'
    'Disease: {disease}\n'
    'Treatment: {treatment}\n\n'
    '{instructions}\n\n'
    'Ranking criteria:\n'
)


def render_criteria_prompt(disease: str, treatment: str, draft: int) -> str:
    return CRITERIA_TEMPLATE.format(
        role=CRITERIA_ROLE,
        disease=disease,
        treatment=treatment,
        instructions=CRITERIA_INSTRUCTIONS.format(disease=disease, treatment=treatment),
        draft=draft,
    )


def render_oneshot_prompt(disease: str, treatment: str, exemplar) -> str:
    return ONESHOT_TEMPLATE.format(
        role=CRITERIA_ROLE,
        exemplar_disease=exemplar.disease,
        exemplar_treatment=exemplar.treatment,
        exemplar_text=exemplar.text.strip(),
        disease=disease,
        treatment=treatment,
        instructions=CRITERIA_INSTRUCTIONS.format(disease=disease, treatment=treatment),
    )


def render_rationale_prompt(query, profile_text: str, scheme, label: str, criteria=None, doctor_id: str = '') -> str:
    """The ranking prompt completed with the predicted label, then the explanation prefix."""
    prompt = assemble_ranking_prompt(query, profile_text, scheme, criteria, doctor_id=doctor_id)
    return prompt.text + label + EXPLANATION_PREFIX
