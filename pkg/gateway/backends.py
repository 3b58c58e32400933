"""
واجهات النماذج اللغوية
Text-generation backends: an OpenAI-compatible HTTP client and three
deterministic mocks (oracle, noise, replay) for offline work.
"""
import hashlib
import logging
import os
import re
import threading
from abc import ABC, abstractmethod
from typing import Any, Dict, Mapping, Optional

from core.exceptions import BackendError, BackendProtocolError, CacheCorrupt
from core.utils import sha256_text

from .cache import ResponseCache
from .models import (
    BackendConfig,
    BackendKind,
    BackendRequest,
    FinishReason,
    RequestHints,
    RequestKind,
    RequestTask,
    TokenizerKind,
)
from .tokenizers import Tokenizer, build_tokenizer
from .transport import post_with_retry

logger = logging.getLogger(__name__)

MAX_RELEVANCE = 5


class Backend(ABC):
    """
    A backend answers two request kinds.

    label_logits responses are {"top_logprobs": {token: logprob}};
    generate_text responses are {"text": str, "finish_reason": str}.
    """

    uses_hints = False

    def __init__(self, config: BackendConfig):
        self.config = config
        self._tokenizer: Optional[Tokenizer] = None
        self._tokenizer_lock = threading.Lock()

    @property
    def identity(self) -> str:
        return self.config.identity

    def default_tokenizer(self) -> str:
        return TokenizerKind.REFERENCE

    @property
    def tokenizer(self) -> Tokenizer:
        with self._tokenizer_lock:
            if self._tokenizer is None:
                kind = self.config.tokenizer
                if kind == TokenizerKind.AUTO:
                    kind = self.default_tokenizer()
                self._tokenizer = build_tokenizer(
                    kind, self.config.endpoint_url, self.config.model_id, self.config.request_timeout, self._headers()
                )
        return self._tokenizer

    def _headers(self) -> Dict[str, str]:
        headers = {
            'Content-Type': 'application/json',
            'Accept': 'application/json',
        }
        credential = os.getenv(self.config.credential_env_var or '')
        if credential:
            headers['Authorization'] = f"Bearer {credential}"
        return headers

    def execute(self, request: BackendRequest) -> Dict[str, Any]:
        if request.kind == RequestKind.LABEL_LOGITS:
            return {'top_logprobs': self.next_token_logprobs(request)}
        if request.kind == RequestKind.GENERATE_TEXT:
            return self.complete(request)
        raise BackendProtocolError(f"Unknown request kind {request.kind!r}")

    @abstractmethod
    def next_token_logprobs(self, request: BackendRequest) -> Dict[str, float]:
        pass

    @abstractmethod
    def complete(self, request: BackendRequest) -> Dict[str, Any]:
        pass

    def _budgeted(self, text: str, max_new_tokens: int) -> Dict[str, Any]:
        """Cut a mock generation to max_new_tokens reference tokens."""
        truncated = self.tokenizer.truncate(text, max_new_tokens)
        finish = FinishReason.LENGTH if truncated != text else FinishReason.STOP
        return {'text': truncated, 'finish_reason': finish.value}


class HttpCompletionBackend(Backend):
    """
    عميل واجهة الإكمال المتوافقة مع OpenAI

    POSTs a raw prompt to a completion endpoint at temperature 0. Logit
    requests ask for one token with top-K logprobs.
    """

    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self.url = config.endpoint_url

    def default_tokenizer(self) -> str:
        return TokenizerKind.ENDPOINT

    def _post(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        response = post_with_retry(self.url, payload, self._headers(), self.config.request_timeout)
        try:
            return response.json()
        except ValueError:
            raise BackendProtocolError('Response body is not JSON')

    def next_token_logprobs(self, request: BackendRequest) -> Dict[str, float]:
        data = self._post({
            'model': self.config.model_id,
            'prompt': request.prompt,
            'max_tokens': 1,
            'temperature': 0,
            'logprobs': int(request.params['top_logprobs']),
            'echo': False,
        })
        try:
            top = data['choices'][0]['logprobs']['top_logprobs'][0]
        except (KeyError, IndexError, TypeError):
            raise BackendProtocolError('Response has no next-token logprob payload')
        if not top:
            raise BackendProtocolError('Response has an empty top_logprobs entry')
        return {str(token): float(value) for token, value in top.items()}

    def complete(self, request: BackendRequest) -> Dict[str, Any]:
        data = self._post({
            'model': self.config.model_id,
            'prompt': request.prompt,
            'max_tokens': int(request.params['max_new_tokens']),
            'temperature': 0,
        })
        try:
            choice = data['choices'][0]
            text = choice['text']
        except (KeyError, IndexError, TypeError):
            raise BackendProtocolError('Response has no completion text')
        if text is None:
            raise BackendProtocolError('Completion text is null')
        finish = FinishReason.LENGTH if choice.get('finish_reason') == 'length' else FinishReason.STOP
        if not text:
            finish = FinishReason.ERROR
        return {'text': text, 'finish_reason': finish.value}


class OracleBackend(Backend):
    """
    نموذج مرجعي يعرف الإجابات الصحيحة

    Reads hidden qrels and answers every request as a perfect judge would.
    Relevance r maps to label index round(r * (K - 1) / 5); logits are
    -6 * |k - k*| + 0.1 * r * k, so the planted label wins by at least 5 and
    every score strategy increases strictly with r.
    """

    uses_hints = True

    def __init__(self, config: BackendConfig, qrels: Optional[Mapping[str, Mapping[str, int]]] = None):
        super().__init__(config)
        if qrels is None:
            qrels = config.oracle_qrels
        if qrels is None:
            from profiles.services import load_qrels
            qrels = load_qrels(config.oracle_qrels_path)
        self.qrels = qrels

    def relevance(self, query_id: str, doctor_id: str) -> int:
        return int(self.qrels.get(query_id, {}).get(doctor_id, 0))

    @staticmethod
    def planted_index(relevance: int, size: int) -> int:
        return int(relevance * (size - 1) / MAX_RELEVANCE + 0.5)

    def _require_hints(self, request: BackendRequest) -> RequestHints:
        if request.hints is None:
            raise BackendProtocolError('The oracle backend needs request hints')
        return request.hints

    def next_token_logprobs(self, request: BackendRequest) -> Dict[str, float]:
        hints = self._require_hints(request)
        tokens = list(request.params['candidates'])
        relevance = self.relevance(hints.query_id, hints.doctor_ids[0])
        planted = self.planted_index(relevance, len(tokens))
        return {
            token: -6.0 * abs(index - planted) + 0.1 * relevance * index
            for index, token in enumerate(tokens)
        }

    def complete(self, request: BackendRequest) -> Dict[str, Any]:
        hints = self._require_hints(request)
        max_new_tokens = int(request.params['max_new_tokens'])

        if hints.task == RequestTask.PAIRWISE:
            first, second = (self.relevance(hints.query_id, d) for d in hints.doctor_ids[:2])
            # equal relevance is answered by position, so swapped orders disagree
            text = 'Passage B' if second > first else 'Passage A'
        elif hints.task == RequestTask.LISTWISE:
            order = sorted(
                range(len(hints.doctor_ids)),
                key=lambda i: (-self.relevance(hints.query_id, hints.doctor_ids[i]), hints.doctor_ids[i])
            )
            text = ' > '.join(f"[{i + 1}]" for i in order)
        elif hints.task == RequestTask.RATIONALE:
            text = (
                f" The profile was assessed as {hints.label} for the stated need.\n"
                f"2. The specialty and expertise fields support the {hints.label} label."
            )
        elif hints.task == RequestTask.CRITERIA:
            text = (
                f"Ranking criteria for {hints.treatment} of {hints.disease}:\n"
                f"1. Clinical experience in treating {hints.disease}.\n"
                f"2. Demonstrated expertise in {hints.treatment}.\n"
                f"3. Professional title and hospital tier.\n"
                f"4. Research output and awards related to {hints.disease}."
            )
        else:
            text = 'OK'
        return self._budgeted(text, max_new_tokens)


class NoiseBackend(Backend):
    """
    Seeded pseudo-random answers: logits are an affine map of a 64-bit hash
    of (seed, prompt digest, label index) into [-5, 5].
    """

    VOCABULARY = ('clinical', 'experience', 'surgery', 'patients', 'research', 'title', 'hospital', 'expertise')

    def _hash(self, *parts) -> int:
        material = '|'.join(str(part) for part in (self.config.seed,) + parts)
        return int.from_bytes(hashlib.blake2b(material.encode('utf-8'), digest_size=8).digest(), 'big')

    def next_token_logprobs(self, request: BackendRequest) -> Dict[str, float]:
        digest = sha256_text(request.prompt)
        scale = float(2 ** 64 - 1)
        return {
            token: -5.0 + 10.0 * self._hash(digest, index) / scale
            for index, token in enumerate(request.params['candidates'])
        }

    def complete(self, request: BackendRequest) -> Dict[str, Any]:
        digest = sha256_text(request.prompt)
        max_new_tokens = int(request.params['max_new_tokens'])
        task = request.hints.task if request.hints else ''

        if task == RequestTask.PAIRWISE:
            text = 'Passage A' if self._hash(digest, 'pair') % 2 == 0 else 'Passage B'
        elif task == RequestTask.LISTWISE:
            count = len(request.hints.doctor_ids) or len(re.findall(r'^\[\d+\]', request.prompt, re.M))
            order = sorted(range(count), key=lambda i: self._hash(digest, 'rank', i))
            text = ' > '.join(f"[{i + 1}]" for i in order)
        else:
            words = [self.VOCABULARY[self._hash(digest, 'word', i) % len(self.VOCABULARY)] for i in range(64)]
            text = ' ' + ' '.join(words) + '.'
        return self._budgeted(text, max_new_tokens)


class ReplayBackend(Backend):
    """
    Serves responses recorded in a cache directory; unknown requests are protocol errors.

    Prompts are rebuilt with the tokenizer the recording run used, as noted
    in the cache manifest, so truncation and label tokens match the keys.
    """

    def __init__(self, config: BackendConfig):
        super().__init__(config)
        self.store = ResponseCache(config.replay_dir)

    def default_tokenizer(self) -> str:
        recorded = self.store.recorded_tokenizer(self.identity)
        if recorded is None:
            logger.warning(f"No tokenizer recorded for {self.identity} in {self.store.directory}; using reference")
            return TokenizerKind.REFERENCE
        return recorded

    def _recorded(self, request: BackendRequest) -> Dict[str, Any]:
        key = request.cache_key(self.identity)
        try:
            response = self.store.load(key)
        except CacheCorrupt as e:
            raise BackendProtocolError(f"Recorded response is corrupt: {e}")
        if response is None:
            raise BackendProtocolError(f"No recorded response for request {key.digest[:12]}")
        return response

    def execute(self, request: BackendRequest) -> Dict[str, Any]:
        return self._recorded(request)

    def next_token_logprobs(self, request: BackendRequest) -> Dict[str, float]:
        return self._recorded(request)['top_logprobs']

    def complete(self, request: BackendRequest) -> Dict[str, Any]:
        return self._recorded(request)


def build_backend(config: BackendConfig) -> Backend:
    if config.kind == BackendKind.HTTP:
        return HttpCompletionBackend(config)
    if config.kind == BackendKind.ORACLE:
        return OracleBackend(config)
    if config.kind == BackendKind.NOISE:
        return NoiseBackend(config)
    if config.kind == BackendKind.REPLAY:
        return ReplayBackend(config)
    raise BackendError(f"Unknown backend kind {config.kind!r}")
