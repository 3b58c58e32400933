"""
طبقة النقل عبر HTTP
POST with the fixed retry policy shared by the completion client and the
tokenizer routes.
"""
import logging
import time
from typing import Any, Dict, Iterable, Optional

import requests

from core.exceptions import BackendError, BackendTimeout
from core.utils import get_setting

logger = logging.getLogger(__name__)

RETRYABLE_ERRORS = (requests.exceptions.ConnectionError, requests.exceptions.ChunkedEncodingError)


def is_retryable_status(status_code: int) -> bool:
    return status_code == 429 or status_code >= 500


def post_with_retry(
    url: str,
    payload: Dict[str, Any],
    headers: Optional[Dict[str, str]] = None,
    timeout: Optional[float] = None,
    accept_statuses: Iterable[int] = (),
) -> requests.Response:
    """
    إرسال الطلب مع إعادة المحاولة

    Returns the first response whose status is 200 or in accept_statuses.
    Timeouts, dropped connections, 429 and 5xx are retried after the fixed
    delays; any other status or request error raises BackendError at once.
    """
    attempts = get_setting('MAX_RETRY_ATTEMPTS')
    delays = get_setting('RETRY_DELAY_SECONDS')
    timeout = timeout or get_setting('DEFAULT_REQUEST_TIMEOUT')
    accepted = {200, *accept_statuses}
    last_error: BackendError = BackendError('no attempt made')

    for attempt in range(1, attempts + 1):
        try:
            response = requests.post(url, json=payload, headers=headers or {}, timeout=timeout)
        except requests.exceptions.Timeout:
            last_error = BackendTimeout(f"Request to {url} timed out after {timeout}s")
        except RETRYABLE_ERRORS as e:
            last_error = BackendError(f"Connection error on {url}: {e}")
        except requests.exceptions.RequestException as e:
            raise BackendError(f"Request to {url} failed: {type(e).__name__}: {e}") from e
        else:
            if response.status_code in accepted:
                return response
            message = f"HTTP {response.status_code} from {url}: {response.text[:500]}"
            if not is_retryable_status(response.status_code):
                raise BackendError(message)
            last_error = BackendError(message)

        if attempt < attempts:
            delay = delays[min(attempt - 1, len(delays) - 1)]
            logger.warning(f"Attempt {attempt}/{attempts} failed ({last_error}); retrying in {delay}s")
            time.sleep(delay)

    raise last_error
