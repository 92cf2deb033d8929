"""Grounding-detector client: cached queries, box parsing, multi-prompt aggregation."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .geometry import BoundingBox, ImagePoint, bbox_center
from .services import (
    FatalServiceError,
    check_image,
    encode_image,
    image_sha256,
    make_transport,
    with_retries,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("first_success", "median_box", "union_box")


class NoDetection(Exception):
    """No parseable coordinates were produced."""


@dataclass(frozen=True)
class DetectorReply:
    prompt_text: str
    raw_text: str
    latency_ms: float
    cached: bool


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    source_prompt_index: int = 0
    parse_confidence: str = "clean"  # "clean" | "recovered"


class DetectorService(Protocol):
    def describe(self) -> dict: ...

    def query(self, image: np.ndarray, prompt: str) -> str: ...


class RemoteDetector:
    """Detector reached over HTTP or a subprocess pipe.

    Wire format: request ``{"image": <base64 PNG>, "prompt": str}``,
    reply ``{"text": str}``.
    """

    def __init__(self, endpoint, service_id: str | None = None, timeout: float = 120.0,
                 max_concurrency: int = 1):
        self.transport = make_transport(endpoint, timeout=timeout)
        self.service_id = service_id or f"detector@{endpoint}"
        self.max_concurrency = max_concurrency

    def describe(self) -> dict:
        return {"service_id": self.service_id, "kind": "detector",
                "max_concurrency": self.max_concurrency, **self.transport.describe()}

    def query(self, image, prompt: str) -> str:
        reply = self.transport({"image": encode_image(image), "prompt": prompt})
        if not isinstance(reply, dict) or not isinstance(reply.get("text"), str):
            raise FatalServiceError(f"detector reply lacks a 'text' field: {reply!r:.200}")
        return reply["text"]


# --- cache -------------------------------------------------------------------

def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only JSON-lines store of raw detector replies.

    Records are ``{image_sha256, prompt_sha256, service_id, raw_text, timestamp}``.
    The file is read once on construction; writes append one line under a lock.
    """

    FILENAME = "detector_cache.jsonl"

    def __init__(self, directory: str | Path | None):
        self.path = Path(directory) / self.FILENAME if directory is not None else None
        self._entries: dict[tuple[str, str, str], str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        key = (rec["image_sha256"], rec["prompt_sha256"], rec["service_id"])
                    except (ValueError, KeyError):
                        logger.warning("skipping corrupt cache line %d in %s", lineno, self.path)
                        continue
                    self._entries.setdefault(key, rec["raw_text"])

    def __len__(self):
        return len(self._entries)

    def get(self, key: tuple[str, str, str]) -> str | None:
        return self._entries.get(key)

    def put(self, key: tuple[str, str, str], raw_text: str) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = raw_text
            if self.path is None:
                return
            rec = {
                "image_sha256": key[0],
                "prompt_sha256": key[1],
                "service_id": key[2],
                "raw_text": raw_text,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


class DetectorClient:
    """Caching, retrying front for a :class:`DetectorService`."""

    def __init__(self, service: DetectorService, cache: ResponseCache | None = None,
                 retries: int = 2, backoff: float = 0.5):
        self.service = service
        self.cache = cache if cache is not None else ResponseCache(None)
        self.retries = retries
        self.backoff = backoff
        self.service_id = service.describe()["service_id"]
        self.calls = 0
        self._count_lock = threading.Lock()
        self._key_locks: dict[tuple, threading.Lock] = {}

    def cache_key(self, image, prompt: str) -> tuple[str, str, str]:
        return (image_sha256(image), prompt_sha256(prompt), self.service_id)

    def query(self, image, prompt: str) -> DetectorReply:
        check_image(image)
        if not prompt.strip():
            raise FatalServiceError("empty prompt")
        key = self.cache_key(image, prompt)
        t0 = time.perf_counter()
        with self._count_lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            hit = self.cache.get(key)
            if hit is not None:
                return DetectorReply(prompt, hit, (time.perf_counter() - t0) * 1e3, True)
            raw = with_retries(lambda: self.service.query(image, prompt), self.retries, self.backoff)
            with self._count_lock:
                self.calls += 1
            self.cache.put(key, raw)
        return DetectorReply(prompt, raw, (time.perf_counter() - t0) * 1e3, False)


def query_detector(client: DetectorClient, image, prompt: str) -> DetectorReply:
    return client.query(image, prompt)


# --- parsing -----------------------------------------------------------------

_NUM = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_BOX_RE = re.compile(
    r"\[\s*(" + _NUM + r")\s*,\s*(" + _NUM + r")\s*,\s*(" + _NUM + r")\s*,\s*(" + _NUM + r")\s*\]"
)


def format_box(b: BoundingBox) -> str:
    return f"[{b.x1!r},{b.y1!r},{b.x2!r},{b.y2!r}]"


def _repair(vals: list[float]) -> tuple[BoundingBox | None, bool]:
    repaired = False
    clamped = []
    for v in vals:
        c = min(max(v, 0.0), 1.0)
        repaired |= c != v
        clamped.append(c)
    x1, y1, x2, y2 = clamped
    if x1 > x2:
        x1, x2 = x2, x1
        repaired = True
    if y1 > y2:
        y1, y2 = y2, y1
        repaired = True
    if x1 == x2 or y1 == y2:
        return None, repaired
    return BoundingBox(x1, y1, x2, y2), repaired


def parse_boxes(raw_text: str, prompt_index: int = 0) -> list[Detection]:
    """Extract every ``[a, b, c, d]`` tuple from a free-text reply.

    Out-of-range values are clamped and swapped corners reordered; either
    repair marks the detection ``recovered``. Tuples that collapse to zero
    width or height are dropped.
    """
    found = []
    for m in _BOX_RE.finditer(raw_text):
        vals = [float(g) for g in m.groups()]
        box, repaired = _repair(vals)
        if box is None:
            logger.debug("dropping degenerate box %s", m.group(0))
            continue
        found.append(Detection(box, prompt_index, "recovered" if repaired else "clean"))
    if not found:
        raise NoDetection(f"no coordinates in reply: {raw_text[:120]!r}")
    return found


def aggregate_detections(
    per_prompt: Sequence[Sequence[Detection]], strategy: str = "median_box"
) -> tuple[BoundingBox, ImagePoint]:
    """Combine per-prompt detections into one box and its center point.

    Only the first detection of each prompt is used. Empty lists stand for
    prompts that produced no detection.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown aggregation strategy {strategy!r}; expected one of {STRATEGIES}")
    firsts = [dets[0] for dets in per_prompt if dets]
    if not firsts:
        raise NoDetection("no prompt produced a detection")
    coords = np.array([d.box.as_tuple() for d in firsts])
    if strategy == "first_success":
        box = firsts[0].box
    elif strategy == "median_box":
        box = BoundingBox(*(float(v) for v in np.median(coords, axis=0)))
    else:
        box = BoundingBox(float(coords[:, 0].min()), float(coords[:, 1].min()),
                          float(coords[:, 2].max()), float(coords[:, 3].max()))
    return box, bbox_center(box)
