"""Promptable segmenter adapter plus mask selection and thresholding."""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .geometry import BinaryMask, BoundingBox, ImagePoint, SoftMask, mask_to_png, soft_mask_from_png
from .services import FatalServiceError, encode_image, make_transport, with_retries


@dataclass(frozen=True)
class MaskCandidate:
    mask: SoftMask
    confidence: float

    def __post_init__(self):
        if not np.isfinite(self.confidence):
            raise ValueError("candidate confidence must be finite")


class SegmenterService(Protocol):
    def describe(self) -> dict: ...

    def segment(self, image: np.ndarray, points: Sequence[ImagePoint],
                box: BoundingBox | None = None) -> list[MaskCandidate]: ...


def segment_request(image, points: Sequence[ImagePoint], box: BoundingBox | None = None) -> dict:
    req = {"image": encode_image(image),
           "points": [{"x": p.x, "y": p.y, "label": p.label} for p in points]}
    if box is not None:
        req["box"] = {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2}
    return req


def parse_segment_request(req: dict) -> tuple[list[ImagePoint], BoundingBox | None]:
    points = [ImagePoint(float(p["x"]), float(p["y"]), p.get("label", "positive"))
              for p in req.get("points", [])]
    box = req.get("box")
    if box is not None:
        box = BoundingBox(float(box["x1"]), float(box["y1"]), float(box["x2"]), float(box["y2"]))
    return points, box


def candidates_to_wire(cands: Sequence[MaskCandidate]) -> dict:
    return {"candidates": [
        {"mask": base64.b64encode(mask_to_png(c.mask)).decode("ascii"), "confidence": float(c.confidence)}
        for c in cands
    ]}


def candidates_from_wire(reply: dict) -> list[MaskCandidate]:
    try:
        return [MaskCandidate(soft_mask_from_png(base64.b64decode(c["mask"])), float(c["confidence"]))
                for c in reply["candidates"]]
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise FatalServiceError(f"malformed segmenter reply: {exc}") from exc


class RemoteSegmenter:
    """Request ``{"image", "points": [{x, y, label}], "box"?: {x1, y1, x2, y2}}``;
    reply ``{"candidates": [{"mask": <base64 PNG>, "confidence": float}]}``."""

    def __init__(self, endpoint, service_id: str | None = None, timeout: float = 120.0,
                 max_concurrency: int = 1):
        self.transport = make_transport(endpoint, timeout=timeout)
        self.service_id = service_id or f"segmenter@{endpoint}"
        self.max_concurrency = max_concurrency

    def describe(self) -> dict:
        return {"service_id": self.service_id, "kind": "segmenter",
                "max_concurrency": self.max_concurrency, **self.transport.describe()}

    def segment(self, image, points, box=None) -> list[MaskCandidate]:
        return candidates_from_wire(self.transport(segment_request(image, points, box)))


def segment(service: SegmenterService, image, points: Sequence[ImagePoint],
            box: BoundingBox | None = None, retries: int = 2, backoff: float = 0.5) -> list[MaskCandidate]:
    if not points and box is None:
        raise ValueError("segmentation needs at least one point or a box")
    cands = with_retries(lambda: service.segment(image, list(points), box), retries, backoff)
    if not cands:
        raise FatalServiceError("segmenter returned no candidates")
    h, w = np.asarray(image).shape[:2]
    for cand in cands:
        if cand.mask.shape != (h, w):
            raise FatalServiceError(f"candidate mask {cand.mask.shape} does not match image {(h, w)}")
    return cands


def select_mask(candidates: Sequence[MaskCandidate]) -> SoftMask:
    """Highest confidence, then largest foreground area, then earliest."""
    if not candidates:
        raise ValueError("no candidates")
    best = 0
    best_key = (candidates[0].confidence, float(candidates[0].mask.values.sum()))
    for i, cand in enumerate(candidates[1:], 1):
        key = (cand.confidence, float(cand.mask.values.sum()))
        if key > best_key:
            best, best_key = i, key
    return candidates[best].mask


def binarize(mask: SoftMask, threshold: float = 0.5) -> BinaryMask:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return BinaryMask(mask.values >= threshold)
