"""
ملفات التشغيل بصيغة TREC
TREC run files and the per-candidate label sidecar.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from core.exceptions import MissingSidecar, ParseError
from core.utils import atomic_write_jsonl, atomic_write_text
from profiles.models import LabelScheme, RankedList
from profiles.services import iter_jsonl

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = '.labels.jsonl'


@dataclass(frozen=True)
class RunRow:
    query_id: str
    doctor_id: str
    rank: int
    score: float
    tag: str


def run_tag(model_id: str, strategy: str, with_criteria: bool) -> str:
    return f"{model_id}/{strategy}/{'criteria' if with_criteria else 'nocriteria'}"


def format_run(ranked_lists: Iterable[RankedList], tag: str) -> str:
    lines = []
    for ranked in ranked_lists:
        for rank, entry in enumerate(ranked.entries, start=1):
            lines.append(f"{ranked.query_id} Q0 {entry.doctor_id} {rank} {entry.score:.6f} {tag}\n")
    return ''.join(lines)


def write_run(path, ranked_lists: Iterable[RankedList], tag: str) -> Path:
    return atomic_write_text(path, format_run(ranked_lists, tag))


def read_run(path) -> Dict[str, List[RunRow]]:
    """Rows per query, ordered by rank."""
    runs: Dict[str, List[RunRow]] = {}
    seen = set()
    with open(path, encoding='utf-8') as handle:
        for line_number, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ParseError(path, line_number, f"expected 6 columns, got {len(parts)}")
            query_id, _, doctor_id, rank, score, tag = parts
            try:
                row = RunRow(query_id, doctor_id, int(rank), float(score), tag)
            except ValueError:
                raise ParseError(path, line_number, 'rank must be an integer and score a number')
            if (query_id, doctor_id) in seen:
                raise ParseError(path, line_number, f"duplicate row for {query_id}/{doctor_id}")
            seen.add((query_id, doctor_id))
            runs.setdefault(query_id, []).append(row)
    for rows in runs.values():
        rows.sort(key=lambda row: row.rank)
    return runs


def sidecar_path_for(run_path) -> Path:
    run_path = Path(run_path)
    return run_path.with_name(run_path.name + SIDECAR_SUFFIX)


def sidecar_rows(ranked: RankedList, scheme: LabelScheme, criteria_id: Optional[str] = None) -> List[dict]:
    rows = []
    for entry in ranked.entries:
        rows.append({
            'query_id': ranked.query_id,
            'doctor_id': entry.doctor_id,
            'criteria_id': criteria_id,
            'labels': list(scheme.names),
            'logits': list(entry.logits),
            'provenance': list(entry.provenance),
            'label_probs': list(entry.label_probs),
            'predicted_label': entry.predicted_label,
            'score': entry.score,
        })
    return rows


def write_sidecar(path, rows: Iterable[dict]) -> Path:
    return atomic_write_jsonl(path, list(rows))


def read_sidecar(path) -> Dict[Tuple[str, str], dict]:
    path = Path(path)
    if not path.exists():
        raise MissingSidecar(f"No label sidecar at {path}")
    rows = {}
    for _, data in iter_jsonl(path):
        rows[(data['query_id'], data['doctor_id'])] = data
    return rows
