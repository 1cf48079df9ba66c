"""JSON-over-HTTP client with retry/backoff and a content-addressed disk cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path

import requests

from tega.errors import BackendUnreachable

log = logging.getLogger(__name__)

RETRY_ATTEMPTS = 3
BACKOFF_BASE_S = 1.0


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


class DiskCache:
    """One JSON file per request, named by the SHA-256 of the canonical request body."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def key(self, route: str, body: dict) -> str:
        return hashlib.sha256(route.encode() + b"\0" + canonical_json(body)).hexdigest()

    def get(self, route: str, body: dict):
        path = self.root / f"{self.key(route, body)}.json"
        if path.exists():
            return json.loads(path.read_text("utf-8"))
        return None

    def put(self, route: str, body: dict, response: dict) -> None:
        path = self.root / f"{self.key(route, body)}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(canonical_json(response))
        os.replace(tmp, path)


class JsonClient:
    """POST JSON bodies to ``endpoint + route``.

    Connection errors, timeouts and 5xx answers are retried ``attempts``
    times with exponential backoff (base, 2*base, 4*base ...); exhausting the
    budget raises BackendUnreachable.  4xx answers are returned to the caller
    as-is so protocol errors surface instead of being retried.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        token: str | None = None,
        timeout: float = 60.0,
        attempts: int = RETRY_ATTEMPTS,
        backoff: float = BACKOFF_BASE_S,
        cache_dir: str | Path | None = None,
        max_in_flight: int = 4,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.token = token
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.cache = DiskCache(cache_dir) if cache_dir is not None else None
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._session = requests.Session()

    def post(self, route: str, body: dict) -> dict:
        if self.cache is not None:
            hit = self.cache.get(route, body)
            if hit is not None:
                return hit
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last: Exception | None = None
        for attempt in range(self.attempts):
            try:
                with self._slots:
                    resp = self._session.post(
                        self.endpoint + route, data=canonical_json(body), headers=headers, timeout=self.timeout
                    )
                if resp.status_code >= 500:
                    raise requests.HTTPError(f"{resp.status_code} from {route}")
                payload = resp.json()
                if not isinstance(payload, dict):
                    raise ValueError("response is not a JSON object")
                if self.cache is not None and resp.ok and "error" not in payload:
                    self.cache.put(route, body, payload)
                return payload
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
                last = exc
                if attempt + 1 < self.attempts:
                    delay = self.backoff * (2**attempt)
                    log.warning("%s%s failed (%s); retrying in %.1fs", self.endpoint, route, exc, delay)
                    time.sleep(delay)
        raise BackendUnreachable(f"{self.endpoint}{route} unreachable after {self.attempts} attempts: {last}")
