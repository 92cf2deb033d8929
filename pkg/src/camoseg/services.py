"""Transport plumbing shared by the detector, extractor and segmenter adapters.

Every remote service speaks JSON. Two transports are provided: HTTP POST and
line-delimited JSON over a subprocess pipe (one request line in, one reply
line out).
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import shlex
import subprocess
import threading
import time
from typing import Any, Callable, Sequence, TypeVar

import numpy as np
import requests

from .geometry import image_to_png, load_image

logger = logging.getLogger(__name__)

T = TypeVar("T")


class ServiceError(RuntimeError):
    retriable = False


class RetriableServiceError(ServiceError):
    """Timeouts, unreachable endpoints, 5xx replies, crashed workers."""

    retriable = True


class FatalServiceError(ServiceError):
    """Bad requests: undecodable images, malformed replies, empty prompts."""


def check_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3 or min(arr.shape[:2]) < 1:
        raise FatalServiceError(f"image must be an H x W x 3 uint8 array, got {arr.dtype} {arr.shape}")
    return arr


def image_sha256(image) -> str:
    """Content hash of the decoded pixels (shape is part of the key)."""
    arr = check_image(image)
    h = hashlib.sha256()
    h.update(f"{arr.shape[0]}x{arr.shape[1]}x{arr.shape[2]}:".encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def encode_image(image) -> str:
    return base64.b64encode(image_to_png(check_image(image))).decode("ascii")


def decode_image(payload: str) -> np.ndarray:
    try:
        return load_image(base64.b64decode(payload))
    except Exception as exc:
        raise FatalServiceError(f"undecodable image payload: {exc}") from exc


def with_retries(fn: Callable[[], T], retries: int = 2, backoff: float = 0.0) -> T:
    """Call ``fn``; retry retriable failures up to ``retries`` extra times."""
    attempt = 0
    while True:
        try:
            return fn()
        except RetriableServiceError as exc:
            if attempt >= retries:
                raise
            attempt += 1
            logger.warning("retriable service error (attempt %d/%d): %s", attempt, retries, exc)
            if backoff:
                time.sleep(backoff * 2 ** (attempt - 1))


class HttpJsonTransport:
    def __init__(self, url: str, timeout: float = 60.0, session: requests.Session | None = None):
        if not url.startswith(("http://", "https://")):
            raise ValueError(f"not an http(s) endpoint: {url!r}")
        self.url = url
        self.timeout = timeout
        self._session = session or requests.Session()

    def __call__(self, payload: dict) -> dict:
        try:
            resp = self._session.post(self.url, json=payload, timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise RetriableServiceError(f"{self.url}: {exc}") from exc
        if resp.status_code >= 500:
            raise RetriableServiceError(f"{self.url}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise FatalServiceError(f"{self.url}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise FatalServiceError(f"{self.url}: reply is not JSON") from exc

    def describe(self) -> dict:
        return {"transport": "http", "endpoint": self.url}


class SubprocessJsonTransport:
    """Line-delimited JSON over a child process's stdin/stdout.

    Requests are serialized with a lock; a crashed child is restarted on the
    next call.
    """

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, encoding="utf-8", bufsize=1,
                )
            except OSError as exc:
                raise RetriableServiceError(f"cannot start {self.command[0]!r}: {exc}") from exc
        return self._proc

    def __call__(self, payload: dict) -> dict:
        with self._lock:
            proc = self._ensure()
            try:
                proc.stdin.write(json.dumps(payload) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                self.close()
                raise RetriableServiceError(f"subprocess pipe failed: {exc}") from exc
            if not line:
                self.close()
                raise RetriableServiceError("subprocess closed its output")
        try:
            reply = json.loads(line)
        except ValueError as exc:
            raise FatalServiceError(f"subprocess reply is not JSON: {line[:200]!r}") from exc
        if isinstance(reply, dict) and "error" in reply:
            raise FatalServiceError(f"subprocess service error: {reply['error']}")
        return reply

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None

    def describe(self) -> dict:
        return {"transport": "subprocess", "command": self.command}


def make_transport(endpoint: str | Sequence[str], timeout: float = 60.0):
    """``http(s)://...`` gives an HTTP transport; anything else is a command line."""
    if isinstance(endpoint, str):
        if endpoint.startswith(("http://", "https://")):
            return HttpJsonTransport(endpoint, timeout=timeout)
        endpoint = shlex.split(endpoint)
    return SubprocessJsonTransport(endpoint)


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
