"""Visual completion: grow one uncertain point into several on-object prompts.

The detector's box center is looked up in a dense feature grid, every cell
is scored by cosine similarity to that feature, the top-k cells are kept and
clustered spatially, and each cluster center is snapped to a real candidate
cell (a medoid) so that prompts never land between clusters.
"""

from __future__ import annotations

import base64
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .geometry import FeatureMap, ImagePoint, cell_to_point, point_to_cell
from .services import FatalServiceError, encode_image, make_transport, with_retries

Cell = tuple[int, int]

FMAP_MAGIC = b"CVPFMAP1"
_FMAP_HEADER = struct.Struct("<4I")
DEFAULT_SHORT_SIDE = 448
DEFAULT_PATCH = 14
MAX_KMEANS_ITERS = 50


@dataclass(frozen=True)
class SimilarityMap:
    scores: np.ndarray  # (H', W')

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class CompletionResult:
    initial: ImagePoint
    candidates: list[tuple[Cell, float]]
    prompts: list[ImagePoint]
    params: dict = field(default_factory=dict)


# --- feature extraction service ----------------------------------------------

@dataclass(frozen=True)
class ResizePolicy:
    """Shorter side scaled to ``short_side``, then center-cropped to a patch multiple."""

    short_side: int = DEFAULT_SHORT_SIDE
    patch_size: int = DEFAULT_PATCH

    def target_size(self, height: int, width: int) -> tuple[int, int, int, int]:
        """Return (resized_h, resized_w, cropped_h, cropped_w)."""
        scale = self.short_side / min(height, width)
        rh, rw = round(height * scale), round(width * scale)
        if height <= width:
            rh = self.short_side
        else:
            rw = self.short_side
        ch = (rh // self.patch_size) * self.patch_size
        cw = (rw // self.patch_size) * self.patch_size
        return rh, rw, ch, cw

    def grid_shape(self, height: int, width: int) -> tuple[int, int]:
        _, _, ch, cw = self.target_size(height, width)
        return ch // self.patch_size, cw // self.patch_size

    def apply(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        rh, rw, ch, cw = self.target_size(h, w)
        out = np.asarray(Image.fromarray(image).resize((rw, rh), Image.BICUBIC))
        top = (rh - ch) // 2
        left = (rw - cw) // 2
        return out[top:top + ch, left:left + cw]

    def as_dict(self) -> dict:
        return {"short_side": self.short_side, "patch_size": self.patch_size, "crop": "center"}


class FeatureExtractor(Protocol):
    def describe(self) -> dict: ...

    def extract(self, image: np.ndarray) -> FeatureMap: ...


def encode_feature_map(fm: FeatureMap) -> bytes:
    return FMAP_MAGIC + _FMAP_HEADER.pack(fm.height, fm.width, fm.dim, fm.patch_size) + \
        fm.data.astype("<f4").tobytes(order="C")


def decode_feature_map(blob: bytes) -> FeatureMap:
    if blob[:8] != FMAP_MAGIC:
        raise ValueError("not a feature map blob (bad magic)")
    h, w, d, patch = _FMAP_HEADER.unpack_from(blob, 8)
    body = blob[8 + _FMAP_HEADER.size:]
    if len(body) != h * w * d * 4:
        raise ValueError(f"feature map body has {len(body)} bytes, expected {h * w * d * 4}")
    return FeatureMap(np.frombuffer(body, dtype="<f4").reshape(h, w, d), patch_size=patch)


def save_feature_map(fm: FeatureMap, path: str | Path) -> None:
    Path(path).write_bytes(encode_feature_map(fm))


def load_feature_map(path: str | Path) -> FeatureMap:
    return decode_feature_map(Path(path).read_bytes())


def feature_map_to_wire(fm: FeatureMap) -> dict:
    return {"h": fm.height, "w": fm.width, "d": fm.dim, "patch_size": fm.patch_size,
            "data": base64.b64encode(fm.data.astype("<f4").tobytes(order="C")).decode("ascii")}


def feature_map_from_wire(reply: dict) -> FeatureMap:
    try:
        h, w, d, patch = (int(reply[k]) for k in ("h", "w", "d", "patch_size"))
        raw = base64.b64decode(reply["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FatalServiceError(f"malformed extractor reply: {exc}") from exc
    if len(raw) != h * w * d * 4:
        raise FatalServiceError(f"extractor sent {len(raw)} bytes for a {h}x{w}x{d} grid")
    return FeatureMap(np.frombuffer(raw, dtype="<f4").reshape(h, w, d), patch_size=patch)


class RemoteExtractor:
    """Dense feature extractor behind HTTP or a subprocess pipe.

    Request ``{"image": <base64 PNG>, "resize_policy": {...}}``; reply
    ``{"h", "w", "d", "patch_size", "data": <base64 row-major float32>}``.
    The image is sent unresized; the service applies ``resize_policy``.
    """

    def __init__(self, endpoint, policy: ResizePolicy | None = None, service_id: str | None = None,
                 timeout: float = 120.0, max_concurrency: int = 1):
        self.transport = make_transport(endpoint, timeout=timeout)
        self.policy = policy or ResizePolicy()
        self.service_id = service_id or f"extractor@{endpoint}"
        self.max_concurrency = max_concurrency

    def describe(self) -> dict:
        return {"service_id": self.service_id, "kind": "extractor",
                "max_concurrency": self.max_concurrency, "resize_policy": self.policy.as_dict(),
                **self.transport.describe()}

    def extract(self, image) -> FeatureMap:
        reply = self.transport({"image": encode_image(image), "resize_policy": self.policy.as_dict()})
        return feature_map_from_wire(reply)


class FeatureCache:
    """On-disk feature maps keyed by image hash and extractor id."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path_for(self, image_hash: str, service_id: str) -> Path:
        tag = "".join(ch if ch.isalnum() else "_" for ch in service_id)[:40]
        return self.directory / f"{image_hash[:32]}_{tag}.fmap"

    def get(self, image_hash: str, service_id: str) -> FeatureMap | None:
        p = self.path_for(image_hash, service_id)
        return load_feature_map(p) if p.exists() else None

    def put(self, image_hash: str, service_id: str, fm: FeatureMap) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        p = self.path_for(image_hash, service_id)
        tmp = p.with_suffix(".tmp")
        save_feature_map(fm, tmp)
        tmp.replace(p)


def extract_features(extractor: FeatureExtractor, image, retries: int = 2,
                     backoff: float = 0.5) -> FeatureMap:
    return with_retries(lambda: extractor.extract(image), retries, backoff)


# --- the kernel --------------------------------------------------------------

def sample_feature(fm: FeatureMap, p: ImagePoint) -> np.ndarray:
    row, col = point_to_cell(p, fm)
    return fm.data[row, col]


def similarity_map(fm: FeatureMap, f_i: np.ndarray) -> SimilarityMap:
    """Cosine similarity of every cell to ``f_i``; zero-norm cells score -1."""
    f_i = np.asarray(f_i, dtype=np.float64)
    if f_i.shape != (fm.dim,):
        raise ValueError(f"query vector has shape {f_i.shape}, expected ({fm.dim},)")
    qn = np.linalg.norm(f_i)
    if qn == 0.0:
        raise ValueError("query feature is the zero vector")
    norms = np.linalg.norm(fm.data, axis=2)
    dots = fm.data @ f_i
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = dots / (norms * qn)
    scores = np.where(norms > 0, np.clip(scores, -1.0, 1.0), -1.0)
    return SimilarityMap(scores)


def top_k(sim: SimilarityMap, k: int) -> list[tuple[Cell, float]]:
    """Highest-scoring cells, descending; ties go to the lower row-major index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    flat = sim.scores.ravel()
    order = np.argsort(-flat, kind="stable")[:k]
    w = sim.width
    return [((int(i) // w, int(i) % w), float(flat[i])) for i in order]


def default_k(n_cells: int) -> int:
    return max(8, math.ceil(0.01 * n_cells))


def _farthest_point_init(pts: np.ndarray, n: int) -> np.ndarray:
    chosen = [0]
    d2 = ((pts - pts[0]) ** 2).sum(axis=1)
    while len(chosen) < n:
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((pts - pts[nxt]) ** 2).sum(axis=1))
    return pts[chosen].copy()


def cluster_points(candidates: Sequence[tuple[Cell, float]], c: int, fm: FeatureMap) -> list[ImagePoint]:
    """Cluster candidate cells into at most ``c`` medoid prompts.

    k-means runs on (row, col) coordinates with farthest-point seeding from
    the first (best-scoring) candidate. Each final center is replaced by the
    closest member of its cluster.
    """
    if not candidates:
        raise ValueError("no candidates to cluster")
    if c < 1:
        raise ValueError("c must be >= 1")
    cells: list[Cell] = []
    for cell, _ in candidates:
        if cell not in cells:
            cells.append(cell)
    pts = np.array(cells, dtype=np.float64)
    n_clusters = min(c, len(cells))
    centers = _farthest_point_init(pts, n_clusters)

    labels = None
    for _ in range(MAX_KMEANS_ITERS):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(n_clusters):
            members = pts[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)

    medoids: list[Cell] = []
    for j in range(n_clusters):
        idx = np.flatnonzero(labels == j)
        if idx.size == 0:
            idx = np.arange(len(pts))
        d2 = ((pts[idx] - centers[j]) ** 2).sum(axis=1)
        cell = cells[int(idx[int(np.argmin(d2))])]
        if cell not in medoids:
            medoids.append(cell)
    return [cell_to_point(r, col, fm) for r, col in medoids]


def complete(fm: FeatureMap, p_i: ImagePoint, k: int | None = None, c: int = 3,
             include_initial: bool = False) -> CompletionResult:
    k = default_k(fm.n_cells) if k is None else k
    sim = similarity_map(fm, sample_feature(fm, p_i))
    candidates = top_k(sim, k)
    prompts = cluster_points(candidates, c, fm)
    if include_initial and p_i not in prompts:
        prompts.append(p_i)
    params = {"k": k, "c": c, "include_initial": include_initial,
              "grid": [fm.height, fm.width], "patch_size": fm.patch_size}
    return CompletionResult(initial=p_i, candidates=candidates, prompts=prompts, params=params)
