"""
مخزن وثائق المعايير
One JSON file per (disease, treatment) pair plus assignment manifests.
"""
import base64
import hashlib
import json
import logging
import threading
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional

from core.exceptions import ConfigError, ParseError
from core.utils import atomic_write_json
from explain.models import CriteriaDocument

logger = logging.getLogger(__name__)


def pair_digest(pair_key: str) -> str:
    """URL-safe digest used as the file name for a pair."""
    raw = hashlib.sha256(pair_key.encode('utf-8')).digest()
    return base64.urlsafe_b64encode(raw).decode('ascii').rstrip('=')


class CriteriaStore:
    """
    Documents are immutable once added; only the selected id changes.

    Layout:
        <dir>/<pair digest>.json      {pair_key, disease, treatment, selected_id, documents}
        <dir>/assignments/<name>.json {mode, seed, assignment: {pair_key: criteria_id}}
    """

    ASSIGNMENTS_DIR = 'assignments'

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path_for(self, pair_key: str) -> Path:
        return self.directory / f"{pair_digest(pair_key)}.json"

    def _read(self, path: Path) -> dict:
        try:
            return json.loads(path.read_text(encoding='utf-8'))
        except (OSError, ValueError) as e:
            raise ParseError(str(path), 1, f"unreadable criteria record: {e}")

    def _record(self, pair_key: str) -> Optional[dict]:
        path = self.path_for(pair_key)
        if not path.exists():
            return None
        return self._read(path)

    def add(self, document: CriteriaDocument) -> CriteriaDocument:
        with self._lock:
            record = self._record(document.pair_key) or {
                'pair_key': document.pair_key,
                'disease': document.disease,
                'treatment': document.treatment,
                'selected_id': None,
                'documents': [],
            }
            ids = {item['criteria_id'] for item in record['documents']}
            if document.criteria_id in ids:
                logger.debug(f"Criteria {document.criteria_id} already stored")
                return document
            record['documents'].append(document.to_dict())
            atomic_write_json(self.path_for(document.pair_key), record)
        return document

    def documents(self, pair_key: str) -> List[CriteriaDocument]:
        record = self._record(pair_key)
        if record is None:
            return []
        return [CriteriaDocument.from_dict(item) for item in record['documents']]

    def get(self, criteria_id: str) -> CriteriaDocument:
        for pair_key in self.pairs():
            for document in self.documents(pair_key):
                if document.criteria_id == criteria_id:
                    return document
        raise ConfigError('criteria_id', f"unknown criteria document {criteria_id!r}")

    def select(self, pair_key: str, criteria_id: str) -> CriteriaDocument:
        with self._lock:
            record = self._record(pair_key)
            if record is None:
                raise ConfigError('pair', f"no criteria stored for {pair_key}")
            matches = [item for item in record['documents'] if item['criteria_id'] == criteria_id]
            if not matches:
                raise ConfigError('criteria_id', f"{criteria_id!r} does not belong to {pair_key}")
            record['selected_id'] = criteria_id
            atomic_write_json(self.path_for(pair_key), record)
        logger.info(f"Selected criteria {criteria_id} for {pair_key}")
        return CriteriaDocument.from_dict(matches[0])

    def selected(self, pair_key: str) -> Optional[CriteriaDocument]:
        record = self._record(pair_key)
        if record is None or not record.get('selected_id'):
            return None
        for item in record['documents']:
            if item['criteria_id'] == record['selected_id']:
                return CriteriaDocument.from_dict(item)
        return None

    def pairs(self) -> List[str]:
        keys = []
        for path in sorted(self.directory.glob('*.json')):
            keys.append(self._read(path)['pair_key'])
        return sorted(keys)

    def selected_assignment(self) -> Dict[str, CriteriaDocument]:
        """pair_key -> selected document, for every pair with a selection."""
        assignment = {}
        for pair_key in self.pairs():
            document = self.selected(pair_key)
            if document is not None:
                assignment[pair_key] = document
        return assignment

    def __iter__(self) -> Iterator[CriteriaDocument]:
        for pair_key in self.pairs():
            yield from self.documents(pair_key)

    # ------------------------------------------------------------------
    # Assignment manifests
    # ------------------------------------------------------------------

    def assignment_path(self, name: str) -> Path:
        return self.directory / self.ASSIGNMENTS_DIR / f"{name}.json"

    def write_assignment(self, name: str, assignment: Mapping[str, CriteriaDocument], mode: str, seed=None) -> Path:
        path = self.assignment_path(name)
        atomic_write_json(path, {
            'mode': str(mode),
            'seed': seed,
            'assignment': {key: assignment[key].criteria_id for key in sorted(assignment)},
        })
        logger.info(f"Wrote {mode} criteria assignment for {len(assignment)} pairs to {path}")
        return path

    def read_assignment(self, path) -> Dict[str, CriteriaDocument]:
        data = self._read(Path(path))
        try:
            mapping = data['assignment']
        except (KeyError, TypeError):
            raise ParseError(str(path), 1, 'assignment manifest has no "assignment" object')
        return {pair_key: self.get(criteria_id) for pair_key, criteria_id in mapping.items()}
