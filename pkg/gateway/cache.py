"""
التخزين المؤقت للاستجابات
Content-addressed response cache: one JSON record per request digest.
"""
import json
import logging
import shutil
import threading
from pathlib import Path
from typing import Any, Dict, Optional

from django.utils import timezone

from core.exceptions import CacheCorrupt, ConfigError
from core.utils import atomic_write_json, canonical_json, sha256_text

from .models import BackendRequest, CacheKey

logger = logging.getLogger(__name__)


def response_checksum(response) -> str:
    return sha256_text(canonical_json(response))


class ResponseCache:
    """
    Records are {key, request, response, checksum, created_at}.

    manifest.json at the top of the directory maps each backend identity to
    the tokenizer its prompts were built with.
    """

    MANIFEST = 'manifest.json'

    def __init__(self, directory):
        self.directory = Path(directory)
        self._write_lock = threading.Lock()

    def path_for(self, key: CacheKey) -> Path:
        return self.directory / key.digest[:2] / f"{key.digest}.json"

    def load(self, key: CacheKey) -> Optional[Dict[str, Any]]:
        """The stored response, None on a miss; CacheCorrupt when the record does not verify."""
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            record = json.loads(path.read_text(encoding='utf-8'))
            response = record['response']
            checksum = record['checksum']
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise CacheCorrupt(f"Unreadable cache record {path.name}: {e}")
        if record.get('key') != key.digest or response_checksum(response) != checksum:
            raise CacheCorrupt(f"Checksum mismatch in cache record {path.name}")
        return response

    def store(self, key: CacheKey, request: BackendRequest, response: Dict[str, Any]) -> Path:
        record = {
            'key': key.digest,
            'request': request.to_dict(),
            'response': response,
            'checksum': response_checksum(response),
            'created_at': timezone.now().isoformat(),
        }
        with self._write_lock:
            return atomic_write_json(self.path_for(key), record)

    @property
    def manifest_path(self) -> Path:
        return self.directory / self.MANIFEST

    def manifest(self) -> Dict[str, Any]:
        if not self.manifest_path.exists():
            return {}
        try:
            data = json.loads(self.manifest_path.read_text(encoding='utf-8'))
        except (OSError, ValueError) as e:
            raise CacheCorrupt(f"Unreadable cache manifest {self.manifest_path}: {e}")
        return data if isinstance(data, dict) else {}

    def recorded_tokenizer(self, identity: str) -> Optional[str]:
        return self.manifest().get('tokenizers', {}).get(identity)

    def record_tokenizer(self, identity: str, tokenizer: str):
        """Note the tokenizer of an identity; one directory never mixes two for the same identity."""
        with self._write_lock:
            data = self.manifest()
            tokenizers = data.setdefault('tokenizers', {})
            recorded = tokenizers.get(identity)
            if recorded == tokenizer:
                return
            if recorded is not None:
                raise ConfigError(
                    'cache_dir',
                    f"{self.directory} holds {identity} responses built with the {recorded} tokenizer, "
                    f"this run uses {tokenizer}"
                )
            tokenizers[identity] = tokenizer
            atomic_write_json(self.manifest_path, data)

    def evict(self, key: CacheKey) -> bool:
        path = self.path_for(key)
        with self._write_lock:
            if path.exists():
                path.unlink()
                return True
        return False

    def stats(self) -> Dict[str, Any]:
        entries = 0
        size = 0
        if self.directory.exists():
            for path in self.directory.glob('*/*.json'):
                entries += 1
                size += path.stat().st_size
        return {'directory': str(self.directory), 'entries': entries, 'bytes': size}

    def clear(self) -> int:
        removed = self.stats()['entries']
        with self._write_lock:
            if self.directory.exists():
                for child in self.directory.iterdir():
                    if child.is_dir() and len(child.name) == 2:
                        shutil.rmtree(child)
                if self.manifest_path.exists():
                    self.manifest_path.unlink()
        logger.info(f"Cleared {removed} cache entries from {self.directory}")
        return removed
