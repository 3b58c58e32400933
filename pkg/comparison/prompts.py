"""
Prompt templates for the comparison baselines.
"""
from typing import Sequence

PAIRWISE_TEMPLATE = (
    'Given a patient request "{query}", which of the following two doctors is more relevant '
    'to the request?\n\n'
    'Passage A: {first}\n\n'
    'Passage B: {second}\n\n'
    'Output Passage A or Passage B:'
)

LISTWISE_HEADER = (
    'I will provide you with {count} doctor profiles, each indicated by a numerical identifier []. '
    'Rank the doctors based on their relevance to the patient request: {query}'
)

LISTWISE_FOOTER = (
    'Patient request: {query}\n\n'
    'Rank the {count} doctors above based on their relevance to the request, most relevant first. '
    'The output format should be [] > [], e.g., [1] > [2]. '
    'Only respond with the ranking results, do not explain.'
)


def render_pairwise(query_text: str, first: str, second: str) -> str:
    return PAIRWISE_TEMPLATE.format(query=query_text, first=first, second=second)


def render_listwise(query_text: str, profiles: Sequence[str]) -> str:
    count = len(profiles)
    blocks = [LISTWISE_HEADER.format(count=count, query=query_text)]
    blocks.extend(f"[{index}] {text}" for index, text in enumerate(profiles, start=1))
    blocks.append(LISTWISE_FOOTER.format(count=count, query=query_text))
    return '\n\n'.join(blocks)
