"""
خدمة بوابة النماذج
The gateway: one shared entry point for label-logit and text requests,
bounded concurrency, response caching and request counters.
"""
import logging
import threading
from collections import Counter
from typing import Dict, Iterable, Optional, Tuple

from core.exceptions import BackendProtocolError, CacheCorrupt, ConfigError, LabelTokenCollision
from core.utils import get_setting
from profiles.models import LabelScheme

from .backends import Backend, build_backend
from .cache import ResponseCache
from .models import (
    BackendConfig,
    BackendRequest,
    GenerationResult,
    LabelLogits,
    LogitProvenance,
    RequestHints,
    RequestKind,
)
from .tokenizers import Tokenizer

logger = logging.getLogger(__name__)


def extract_label_logits(
    top_logprobs: Dict[str, float],
    scheme: LabelScheme,
    first_tokens: Iterable[str],
    floor_offset: Optional[float] = None,
) -> LabelLogits:
    """
    Match each label's first token against the returned top-K entries.

    Labels missing from the top-K get (lowest returned logprob - offset) and
    are flagged floored; observed labels keep their values, so the argmax
    among observed labels is unchanged.
    """
    if not top_logprobs:
        raise BackendProtocolError('Empty top-K logprob payload')
    floor_offset = get_setting('LOGPROB_FLOOR_OFFSET') if floor_offset is None else floor_offset

    normalized: Dict[str, float] = {}
    for token, value in top_logprobs.items():
        key = str(token).strip()
        normalized[key] = max(float(value), normalized.get(key, float('-inf')))

    floor = min(float(v) for v in top_logprobs.values()) - floor_offset
    values = []
    provenance = []
    for token in first_tokens:
        if token in normalized:
            values.append(normalized[token])
            provenance.append(LogitProvenance.OBSERVED.value)
        else:
            values.append(floor)
            provenance.append(LogitProvenance.FLOORED.value)
    return LabelLogits(scheme.names, tuple(values), tuple(provenance))


class BackendGateway:
    """
    بوابة موحدة للنماذج

    Safe to share between threads: at most max_in_flight backend calls run at
    once and cache writes are serialized.
    """

    def __init__(self, config: BackendConfig, cache_dir=None, backend: Optional[Backend] = None):
        self.config = config
        self.backend = backend or build_backend(config)
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0
        self.counters: Counter = Counter()
        self._first_tokens: Dict[Tuple[str, ...], Tuple[str, ...]] = {}
        self._tokenizer_recorded = False

    @property
    def identity(self) -> str:
        return self.backend.identity

    @property
    def tokenizer(self) -> Tokenizer:
        return self.backend.tokenizer

    @property
    def tokenizer_name(self) -> str:
        return self.tokenizer.name

    def _count(self, name: str, amount: int = 1):
        with self._lock:
            self.counters[name] += amount

    def stats(self) -> Dict[str, int]:
        with self._lock:
            data = dict(self.counters)
        data['peak_in_flight'] = self.peak_in_flight
        for name in ('backend_calls', 'cache_hits', 'cache_misses', 'label_logits', 'generate_text'):
            data.setdefault(name, 0)
        return data

    # ------------------------------------------------------------------
    # Transport
    # ------------------------------------------------------------------

    def _call_backend(self, request: BackendRequest) -> dict:
        with self._slots:
            with self._lock:
                self._in_flight += 1
                self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
            try:
                response = self.backend.execute(request)
            finally:
                with self._lock:
                    self._in_flight -= 1
        self._count('backend_calls')
        self._count(str(request.kind))
        return response

    def cached(self, request: BackendRequest) -> dict:
        """
        Forward a request once; later identical requests are served from disk.

        A corrupt record is evicted and the request re-issued.
        """
        if self.cache is None:
            return self._call_backend(request)

        key = request.cache_key(self.identity, include_hints=self.backend.uses_hints)
        try:
            response = self.cache.load(key)
        except CacheCorrupt as e:
            logger.warning(f"{e}; evicting and re-issuing the request")
            self.cache.evict(key)
            self._count('cache_corrupt')
            response = None

        if response is not None:
            self._count('cache_hits')
            return response

        self._count('cache_misses')
        if not self._tokenizer_recorded:
            self.cache.record_tokenizer(self.identity, self.tokenizer_name)
            self._tokenizer_recorded = True
        response = self._call_backend(request)
        self.cache.store(key, request, response)
        return response

    # ------------------------------------------------------------------
    # Request kinds
    # ------------------------------------------------------------------

    def label_first_tokens(self, scheme: LabelScheme) -> Tuple[str, ...]:
        """First token of every label; validated once per scheme."""
        if scheme.names in self._first_tokens:
            return self._first_tokens[scheme.names]
        tokens = tuple(self.tokenizer.first_token(name) for name in scheme.names)
        seen: Dict[str, str] = {}
        for name, token in zip(scheme.names, tokens):
            if token in seen:
                raise LabelTokenCollision(seen[token], name, token)
            seen[token] = name
        self._first_tokens[scheme.names] = tokens
        return tokens

    def fetch_label_logits(self, prompt: str, scheme: LabelScheme, hints: Optional[RequestHints] = None) -> LabelLogits:
        first_tokens = self.label_first_tokens(scheme)
        if self.config.top_logprobs < scheme.size:
            raise ConfigError('backend.top_logprobs', f"must be at least {scheme.size} for this label scheme")
        request = BackendRequest(
            kind=RequestKind.LABEL_LOGITS.value,
            prompt=prompt,
            params={
                'candidates': list(first_tokens),
                'max_tokens': 1,
                'temperature': 0,
                'top_logprobs': self.config.top_logprobs,
            },
            hints=hints,
        )
        response = self.cached(request)
        try:
            top = response['top_logprobs']
        except (KeyError, TypeError):
            raise BackendProtocolError('Logit response has no top_logprobs')
        logits = extract_label_logits(top, scheme, first_tokens)
        if logits.floored_count:
            self._count('floored_labels', logits.floored_count)
            logger.debug(f"{logits.floored_count} labels floored for a prompt of {len(prompt)} chars")
        return logits

    def generate_text(self, prompt: str, max_new_tokens: int, hints: Optional[RequestHints] = None) -> GenerationResult:
        if max_new_tokens < 1:
            raise ValueError('max_new_tokens must be at least 1')
        request = BackendRequest(
            kind=RequestKind.GENERATE_TEXT.value,
            prompt=prompt,
            params={'max_new_tokens': int(max_new_tokens), 'temperature': 0},
            hints=hints,
        )
        response = self.cached(request)
        try:
            return GenerationResult(response['text'], response['finish_reason'])
        except (KeyError, TypeError, ValueError) as e:
            raise BackendProtocolError(f"Malformed generation response: {e}")
