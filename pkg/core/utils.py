"""
أدوات مساعدة مشتركة
Shared helpers: settings access, digests, seeds and atomic file writes.
"""
import hashlib
import json
import os
import tempfile
from pathlib import Path

from django.conf import settings


def get_setting(name):
    return settings.MEDRANK_SETTINGS[name]


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def file_digest(path) -> str:
    """SHA-256 of a file's bytes, streamed."""
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(',', ':'))


def derive_seed(seed: int, *tags) -> int:
    """
    اشتقاق بذرة فرعية من بذرة المهمة

    Every random decision of a job uses derive_seed(job_seed, purpose, ...)
    so one seed reproduces the whole experiment.
    """
    material = canonical_json([int(seed)] + [str(tag) for tag in tags])
    return int.from_bytes(hashlib.sha256(material.encode('utf-8')).digest()[:8], 'big')


def round_half_up(value: float) -> int:
    return int(value + 0.5) if value >= 0 else -int(-value + 0.5)


def atomic_write_text(path, text: str) -> Path:
    """Write through a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_json(path, data) -> Path:
    return atomic_write_text(path, json.dumps(data, ensure_ascii=False, indent=2) + '\n')


def atomic_write_jsonl(path, rows) -> Path:
    lines = [json.dumps(row, ensure_ascii=False) for row in rows]
    return atomic_write_text(path, ''.join(line + '\n' for line in lines))
