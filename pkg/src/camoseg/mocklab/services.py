"""Offline stand-ins for the detector, feature extractor and segmenter.

Services find the planted scene behind an image through its content hash, so
they can be driven with nothing but pixels, exactly like the real adapters.
Images the world does not know fall back to colour features and a refusing
detector.
"""

from __future__ import annotations

import hashlib
from collections import deque
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..detector import format_box
from ..geometry import BoundingBox, FeatureMap, ImagePoint, SoftMask, point_to_cell
from ..segmenter import MaskCandidate
from ..services import check_image, image_sha256
from .scenes import PlantedScene, load_scene_records

REFUSAL = "I cannot find any camouflaged object in this image."
GENERIC_PATCH = 8


class MockWorld:
    def __init__(self, scenes: Iterable[PlantedScene] = ()):
        self._scenes: dict[str, PlantedScene] = {}
        for s in scenes:
            self.register(s)

    def register(self, scene: PlantedScene) -> str:
        key = image_sha256(scene.image)
        self._scenes[key] = scene
        return key

    def lookup(self, image) -> PlantedScene | None:
        return self._scenes.get(image_sha256(image))

    def __len__(self):
        return len(self._scenes)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockWorld":
        return cls(load_scene_records(path))


def _derived_rng(*parts) -> np.random.Generator:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "little"))


def _noisy_box(box: BoundingBox, noise: float, rng: np.random.Generator) -> BoundingBox:
    vals = np.array(box.as_tuple()) + rng.uniform(-noise, noise, size=4)
    vals = np.clip(vals, 0.0, 1.0)
    x1, x2 = sorted(vals[[0, 2]])
    y1, y2 = sorted(vals[[1, 3]])
    min_side = 0.01

    def widen(a, b):
        if b - a >= min_side:
            return a, b
        mid = min(max((a + b) / 2, min_side / 2), 1 - min_side / 2)
        return mid - min_side / 2, mid + min_side / 2

    x1, x2 = widen(x1, x2)
    y1, y2 = widen(y1, y2)
    return BoundingBox(float(x1), float(y1), float(x2), float(y2))


class MockDetector:
    """Replies with the planted box, optionally jittered, or a refusal.

    Jitter and refusals are derived from (seed, image hash, prompt), so a
    given query always gets the same reply.
    """

    def __init__(self, world: MockWorld, box_noise: float = 0.0, miss_prob: float = 0.0,
                 seed: int = 0, service_id: str | None = None):
        self.world = world
        self.box_noise = box_noise
        self.miss_prob = miss_prob
        self.seed = seed
        self.service_id = service_id or f"mock-detector(noise={box_noise},miss={miss_prob},seed={seed})"

    def describe(self) -> dict:
        return {"service_id": self.service_id, "kind": "detector", "max_concurrency": 64}

    def query(self, image, prompt: str) -> str:
        scene = self.world.lookup(image)
        if scene is None:
            return REFUSAL
        rng = _derived_rng(self.seed, image_sha256(image), prompt)
        if rng.random() < self.miss_prob:
            return REFUSAL
        box = scene.gt_box
        if self.box_noise > 0:
            box = _noisy_box(box, self.box_noise, rng)
        return f"The object is located at {format_box(box)}."


def generic_features(image) -> FeatureMap:
    """Per-cell mean colour, centred, for images outside the world."""
    img = check_image(image).astype(np.float64) / 255.0
    h, w = img.shape[:2]
    gh, gw = max(1, h // GENERIC_PATCH), max(1, w // GENERIC_PATCH)
    ph, pw = h // gh, w // gw
    cells = img[: gh * ph, : gw * pw].reshape(gh, ph, gw, pw, 3).mean(axis=(1, 3))
    cells = cells - cells.mean(axis=(0, 1))
    return FeatureMap(np.concatenate([cells, np.full((gh, gw, 1), 1e-3)], axis=2), patch_size=ph)


class MockExtractor:
    def __init__(self, world: MockWorld, service_id: str = "mock-extractor"):
        self.world = world
        self.service_id = service_id

    def describe(self) -> dict:
        return {"service_id": self.service_id, "kind": "extractor", "max_concurrency": 64}

    def extract(self, image) -> FeatureMap:
        scene = self.world.lookup(image)
        return scene.features if scene is not None else generic_features(image)


def flood_cells(fm: FeatureMap, seeds: Sequence[tuple[int, int]], threshold: float) -> tuple[np.ndarray, float]:
    """4-connected flood from ``seeds`` over cells whose cosine to the mean
    seed feature is at least ``threshold``. Seeds are always included.

    Returns the cell mask and the mean cosine over the filled cells.
    """
    data = fm.data
    mean = np.mean([data[r, c] for r, c in seeds], axis=0)
    norms = np.linalg.norm(data, axis=2) * np.linalg.norm(mean)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, (data @ mean) / norms, -1.0)
    ok = cos >= threshold
    filled = np.zeros(cos.shape, dtype=bool)
    queue = deque()
    for cell in seeds:
        if not filled[cell]:
            filled[cell] = True
            queue.append(cell)
    h, w = cos.shape
    while queue:
        r, c = queue.popleft()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < h and 0 <= nc < w and ok[nr, nc] and not filled[nr, nc]:
                filled[nr, nc] = True
                queue.append((nr, nc))
    return filled, float(np.clip(cos[filled].mean(), -1.0, 1.0))


def upsample_cells(cells: np.ndarray, height: int, width: int) -> np.ndarray:
    gh, gw = cells.shape
    rows = np.minimum(((np.arange(height) + 0.5) * gh / height).astype(int), gh - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * gw / width).astype(int), gw - 1)
    return cells[np.ix_(rows, cols)]


class MockSegmenter:
    """Similarity flood fill over the scene's feature grid."""

    def __init__(self, world: MockWorld, threshold: float = 0.7, service_id: str | None = None):
        self.world = world
        self.threshold = threshold
        self.extractor = MockExtractor(world)
        self.service_id = service_id or f"mock-segmenter(threshold={threshold})"

    def describe(self) -> dict:
        return {"service_id": self.service_id, "kind": "segmenter", "max_concurrency": 64}

    def segment(self, image, points: Sequence[ImagePoint], box: BoundingBox | None = None) -> list[MaskCandidate]:
        image = check_image(image)
        fm = self.extractor.extract(image)
        prompts = list(points)
        if not prompts and box is not None:
            prompts = [ImagePoint((box.x1 + box.x2) / 2, (box.y1 + box.y2) / 2)]
        seeds = list(dict.fromkeys(point_to_cell(p, fm) for p in prompts if p.label == "positive"))
        if not seeds:
            raise ValueError("mock segmenter needs a positive prompt")
        cells, conf = flood_cells(fm, seeds, self.threshold)
        pix = upsample_cells(cells, image.shape[0], image.shape[1])
        return [MaskCandidate(SoftMask(pix.astype(np.float64)), max(0.0, conf))]


class MockParaphraser:
    """Returns a fixed list of rewordings, or raises when ``fail`` is set."""

    def __init__(self, texts: Sequence[str] = (), fail: bool = False):
        self.texts = list(texts)
        self.fail = fail
        self.calls = 0

    def __call__(self, texts: Sequence[str], n: int) -> list[str]:
        self.calls += 1
        if self.fail:
            raise ConnectionError("paraphrase service unreachable")
        return self.texts[:n]


def mock_detector(scene_or_world, box_noise: float = 0.0, miss_prob: float = 0.0, seed: int = 0) -> MockDetector:
    return MockDetector(_as_world(scene_or_world), box_noise, miss_prob, seed)


def mock_extractor(scene_or_world) -> MockExtractor:
    return MockExtractor(_as_world(scene_or_world))


def mock_segmenter(scene_or_world, threshold: float = 0.7) -> MockSegmenter:
    return MockSegmenter(_as_world(scene_or_world), threshold)


def _as_world(obj) -> MockWorld:
    if isinstance(obj, MockWorld):
        return obj
    if isinstance(obj, PlantedScene):
        return MockWorld([obj])
    return MockWorld(obj)
