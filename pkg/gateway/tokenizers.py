"""
المقطّعات المستخدمة لحساب ميزانية الرموز
Tokenizers used for prompt budgets and label first-token matching.
"""
import logging
import math
import re
import threading
from abc import ABC, abstractmethod
from typing import List, Optional
from urllib.parse import urlsplit

from core.exceptions import BackendProtocolError, ConfigError
from core.utils import get_setting

from .models import TokenizerKind
from .transport import post_with_retry

logger = logging.getLogger(__name__)

# statuses meaning the server has no such route, as opposed to a transient failure
ABSENT_ROUTE_STATUSES = (404, 405)


class Tokenizer(ABC):
    """Splits text into tokens whose concatenation is the original text."""

    name = 'abstract'

    @abstractmethod
    def tokenize(self, text: str) -> List[str]:
        pass

    def count(self, text: str) -> int:
        return len(self.tokenize(text))

    def truncate(self, text: str, budget: int) -> str:
        """Longest token prefix of text holding at most budget tokens."""
        if budget <= 0:
            raise ValueError('budget must be positive')
        tokens = self.tokenize(text)
        if len(tokens) <= budget:
            return text
        return ''.join(tokens[:budget])

    def first_token(self, label: str) -> str:
        tokens = self.tokenize(label.strip())
        if not tokens:
            raise ValueError('cannot tokenize an empty label')
        return tokens[0].strip()


class ReferenceTokenizer(Tokenizer):
    """
    مقطّع مرجعي حتمي

    Words are cut into pieces of at most four word characters, every other
    non-space character is its own token, and leading whitespace sticks to
    the piece that follows it. Used by the mock backends and test fixtures.
    """

    name = TokenizerKind.REFERENCE.value
    TOKEN_RE = re.compile(r'\s*(?:\w{1,4}|[^\w\s])|\s+')

    def tokenize(self, text: str) -> List[str]:
        return self.TOKEN_RE.findall(text)


class CharBudgetTokenizer(Tokenizer):
    """
    Fallback when the backend cannot tokenize: a fixed number of characters per token.

    Budgets are counted in characters, but a label's first token is its first
    word, which is how completion servers return short English labels.
    """

    name = TokenizerKind.CHAR_BUDGET.value

    def __init__(self, chars_per_token: Optional[int] = None):
        self.chars_per_token = chars_per_token or get_setting('CHAR_BUDGET_PER_TOKEN')

    def tokenize(self, text: str) -> List[str]:
        step = self.chars_per_token
        return [text[i:i + step] for i in range(0, len(text), step)]

    def count(self, text: str) -> int:
        return math.ceil(len(text) / self.chars_per_token)

    def truncate(self, text: str, budget: int) -> str:
        if budget <= 0:
            raise ValueError('budget must be positive')
        return text[:budget * self.chars_per_token]

    def first_token(self, label: str) -> str:
        words = label.split()
        if not words:
            raise ValueError('cannot tokenize an empty label')
        return words[0]


class EndpointTokenizer(Tokenizer):
    """
    Uses the inference server's /tokenize and /detokenize routes.

    Both routes are checked on first use. When either is absent the character
    budget is used for the whole process; transient failures are retried and
    then raised, never turned into a fallback.
    """

    CHECK_TEXT = 'High'

    def __init__(self, endpoint_url: str, model_id: str, timeout: float = 30, headers: Optional[dict] = None):
        parts = urlsplit(endpoint_url)
        self.base_url = f"{parts.scheme}://{parts.netloc}"
        self.model_id = model_id
        self.timeout = timeout
        self.headers = headers or {}
        self.fallback = CharBudgetTokenizer()
        self.available: Optional[bool] = None
        self._resolve_lock = threading.Lock()

    @property
    def name(self) -> str:
        return TokenizerKind.ENDPOINT.value if self.resolve() else self.fallback.name

    def _request(self, route: str, payload: dict) -> Optional[dict]:
        """The route's JSON body, or None when the server has no such route."""
        response = post_with_retry(
            f"{self.base_url}{route}", payload, self.headers, self.timeout, accept_statuses=ABSENT_ROUTE_STATUSES
        )
        if response.status_code in ABSENT_ROUTE_STATUSES:
            logger.warning(f"Tokenizer route {route} returned HTTP {response.status_code}")
            return None
        try:
            return response.json()
        except ValueError:
            raise BackendProtocolError(f"Tokenizer route {route} returned a non-JSON body")

    def resolve(self) -> bool:
        """Whether the server tokenizes; decided once per process."""
        with self._resolve_lock:
            if self.available is None:
                encoded = self._request('/tokenize', self._encode_payload(self.CHECK_TEXT))
                decoded = None
                if encoded is not None:
                    decoded = self._request('/detokenize', {
                        'model': self.model_id, 'tokens': encoded.get('tokens', [])[:1],
                    })
                self.available = decoded is not None
                if not self.available:
                    logger.warning(f"{self.base_url} cannot tokenize; using the character budget for this process")
        return self.available

    def _encode_payload(self, text: str) -> dict:
        return {
            'model': self.model_id,
            'prompt': text,
            'add_special_tokens': False,
            'return_token_strs': True,
        }

    def _post(self, route: str, payload: dict) -> dict:
        data = self._request(route, payload)
        if data is None:
            raise BackendProtocolError(f"Tokenizer route {route} disappeared after it was checked")
        return data

    def tokenize(self, text: str) -> List[str]:
        if not self.resolve():
            return self.fallback.tokenize(text)
        data = self._post('/tokenize', self._encode_payload(text))
        if data.get('token_strs'):
            return list(data['token_strs'])
        return [str(token_id) for token_id in data.get('tokens', [])]

    def count(self, text: str) -> int:
        if not self.resolve():
            return self.fallback.count(text)
        data = self._post('/tokenize', self._encode_payload(text))
        return int(data.get('count', len(data.get('tokens', []))))

    def truncate(self, text: str, budget: int) -> str:
        if budget <= 0:
            raise ValueError('budget must be positive')
        if not self.resolve():
            return self.fallback.truncate(text, budget)
        tokens = self._post('/tokenize', self._encode_payload(text)).get('tokens', [])
        if len(tokens) <= budget:
            return text
        prefix = self._post('/detokenize', {'model': self.model_id, 'tokens': tokens[:budget]}).get('prompt', '')
        # detokenization may normalize whitespace; keep the result a prefix of the input
        return prefix if text.startswith(prefix) else self.fallback.truncate(text, budget)

    def first_token(self, label: str) -> str:
        if not self.resolve():
            return self.fallback.first_token(label)
        tokens = self._post('/tokenize', self._encode_payload(label.strip())).get('tokens', [])
        # raw token strings carry byte-level markers; decode the id instead
        decoded = self._post('/detokenize', {'model': self.model_id, 'tokens': tokens[:1]})
        return decoded.get('prompt', '').strip()


def build_tokenizer(
    kind: str,
    endpoint_url: str = '',
    model_id: str = '',
    timeout: Optional[float] = None,
    headers: Optional[dict] = None,
) -> Tokenizer:
    if kind == TokenizerKind.REFERENCE:
        return ReferenceTokenizer()
    if kind == TokenizerKind.CHAR_BUDGET:
        return CharBudgetTokenizer()
    if kind == TokenizerKind.ENDPOINT:
        if not endpoint_url:
            raise ConfigError('backend.endpoint_url', 'the endpoint tokenizer needs the server URL')
        return EndpointTokenizer(endpoint_url, model_id, timeout or get_setting('DEFAULT_REQUEST_TIMEOUT'), headers)
    raise ConfigError('backend.tokenizer', f"unknown tokenizer {kind!r}")
