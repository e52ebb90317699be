"""Minimal retrying JSON-over-HTTP helper shared by the remote clients."""
from __future__ import annotations

import time

import httpx

from .errors import TransportError

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


def post_json(
    client: httpx.Client,
    url: str,
    payload: dict,
    headers: dict | None = None,
    max_retries: int = 3,
    backoff: float = 0.5,
) -> dict:
    """POST a JSON payload, retrying transient failures with exponential backoff.

    Raises TransportError once ``max_retries`` attempts are exhausted;
    non-retryable HTTP statuses fail immediately.
    """
    last_error: Exception | None = None
    for attempt in range(max_retries):
        try:
            response = client.post(url, json=payload, headers=headers or {})
        except httpx.HTTPError as exc:
            last_error = exc
        else:
            if response.status_code == 200:
                return response.json()
            last_error = TransportError(
                f"HTTP {response.status_code} from {url}: {response.text[:200]}"
            )
            if response.status_code not in RETRYABLE_STATUS:
                break
        if attempt + 1 < max_retries:
            time.sleep(backoff * (2**attempt))
    raise TransportError(f"request to {url} failed after {max_retries} attempts: {last_error}")
