"""Planted synthetic scenes: a low-contrast object plus known feature directions."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import BinaryMask, BoundingBox, FeatureMap, mask_to_png

SHAPES = ("ellipse", "blob")


@dataclass(frozen=True)
class SceneParams:
    """Knobs for :func:`gen_scene`.

    ``size_frac`` is the target object area as a fraction of the image, in
    (0, 0.5], or exactly 1.0 for a full-frame object. ``separation`` is
    ``1 - cos(fg_dir, bg_dir)`` and lies in [0, 2]. With ``cell_aligned``
    the ground truth is snapped to whole feature cells, so a perfect cell-level
    segmenter reproduces it pixel for pixel.
    """

    shape: str = "ellipse"
    size_frac: float = 0.1
    separation: float = 1.0
    noise_sigma: float = 0.0
    grid: int = 48
    patch: int = 8
    dim: int = 16
    contrast: int = 10
    cell_aligned: bool = False

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if not (0.0 < self.size_frac <= 0.5 or self.size_frac == 1.0):
            raise ValueError("size_frac must be in (0, 0.5] or exactly 1.0")
        if not 0.0 <= self.separation <= 2.0:
            raise ValueError("separation must be in [0, 2]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.grid < 2 or self.patch < 1 or self.dim < 2:
            raise ValueError("grid >= 2, patch >= 1 and dim >= 2 required")


@dataclass(frozen=True, eq=False)
class PlantedScene:
    image: np.ndarray
    gt: BinaryMask
    features: FeatureMap
    fg_cells: frozenset
    fg_dir: np.ndarray
    bg_dir: np.ndarray
    cosine: float
    noise_sigma: float
    seed: int
    params: SceneParams = field(default_factory=SceneParams)

    @property
    def gt_box(self) -> BoundingBox:
        rows, cols = np.nonzero(self.gt.values)
        h, w = self.gt.shape
        return BoundingBox(cols.min() / w, rows.min() / h, (cols.max() + 1) / w, (rows.max() + 1) / h)


def _ellipse(h, w, cy, cx, a, b, theta):
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy + 0.5 - cy, xx + 0.5 - cx
    c, s = math.cos(theta), math.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def _draw_mask(rng: np.random.Generator, p: SceneParams, h: int, w: int) -> np.ndarray:
    if p.size_frac == 1.0:
        return np.ones((h, w), dtype=bool)
    area = p.size_frac * h * w
    ratio = rng.uniform(0.6, 1.0)
    if p.shape == "ellipse":
        a = math.sqrt(area / (math.pi * ratio))
        b = a * ratio
        theta = rng.uniform(0, math.pi)
        r = min(max(a, b), 0.5 * min(h, w) - 1)
        cy = rng.uniform(r + 1, h - r - 1)
        cx = rng.uniform(r + 1, w - r - 1)
        return _ellipse(h, w, cy, cx, a, b, theta)
    # blob: overlapping ellipses around a common center
    n = int(rng.integers(3, 6))
    a0 = math.sqrt(area / (math.pi * n * ratio)) * 1.3
    margin = 2.2 * a0
    cy0 = rng.uniform(min(margin, h / 2), max(h - margin, h / 2))
    cx0 = rng.uniform(min(margin, w / 2), max(w - margin, w / 2))
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(n):
        ang = rng.uniform(0, 2 * math.pi)
        off = rng.uniform(0, 0.8 * a0)
        mask |= _ellipse(h, w, cy0 + off * math.sin(ang), cx0 + off * math.cos(ang),
                         a0 * rng.uniform(0.7, 1.1), a0 * ratio * rng.uniform(0.7, 1.1),
                         rng.uniform(0, math.pi))
    return mask


def _directions(rng: np.random.Generator, dim: int, cosine: float) -> tuple[np.ndarray, np.ndarray]:
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    o = rng.standard_normal(dim)
    o -= (o @ u) * u
    o /= np.linalg.norm(o)
    v = cosine * u + math.sqrt(max(0.0, 1.0 - cosine * cosine)) * o
    return u, v / np.linalg.norm(v)


def gen_scene(seed: int, params: SceneParams | None = None, **overrides) -> PlantedScene:
    """Deterministically build a planted scene from ``seed``."""
    p = params or SceneParams()
    if overrides:
        p = SceneParams(**{**asdict(p), **overrides})
    rng = np.random.default_rng(seed)
    h = w = p.grid * p.patch
    gt = _draw_mask(rng, p, h, w)

    # cell footprint majority decides fg membership
    frac = gt.reshape(p.grid, p.patch, p.grid, p.patch).mean(axis=(1, 3))
    fg_grid = frac > 0.5
    fg_cells = frozenset((int(r), int(c)) for r, c in zip(*np.nonzero(fg_grid)))
    if p.cell_aligned:
        if not fg_grid.any():
            raise ValueError("object too small to cover a whole cell")
        gt = np.kron(fg_grid, np.ones((p.patch, p.patch), dtype=bool))

    cosine = 1.0 - p.separation
    u, v = _directions(rng, p.dim, cosine)
    feats = np.where(fg_grid[..., None], u, v)
    if p.noise_sigma > 0:
        feats = feats + rng.normal(0.0, p.noise_sigma, size=feats.shape)

    base = rng.integers(60, 180, size=3)
    tint = rng.choice([-1, 1], size=3) * p.contrast
    img = np.broadcast_to(base, (h, w, 3)).astype(np.float64)
    img = img + gt[..., None] * tint
    img = img + rng.normal(0.0, 6.0, size=img.shape)
    image = np.clip(np.round(img), 0, 255).astype(np.uint8)

    return PlantedScene(
        image=image,
        gt=BinaryMask(gt),
        features=FeatureMap(feats, patch_size=p.patch),
        fg_cells=fg_cells,
        fg_dir=u,
        bg_dir=v,
        cosine=float(u @ v),
        noise_sigma=p.noise_sigma,
        seed=seed,
        params=p,
    )


def cell_mask(scene: PlantedScene) -> BinaryMask:
    """The fg cells painted at pixel resolution."""
    p = scene.params
    grid = np.zeros((p.grid, p.grid), dtype=bool)
    for r, c in scene.fg_cells:
        grid[r, c] = True
    return BinaryMask(np.kron(grid, np.ones((p.patch, p.patch), dtype=bool)))


SCENES_FILE = "scenes.json"


def write_synthetic_dataset(root: str | Path, n: int, seed: int = 0,
                            params: SceneParams | None = None) -> list[str]:
    """Write ``n`` planted scenes as ``Image/*.png`` + ``GT/*.png`` under ``root``.

    A ``scenes.json`` sidecar records the seed and parameters of each image so
    mock services can regenerate the planted features.
    """
    root = Path(root)
    (root / "Image").mkdir(parents=True, exist_ok=True)
    (root / "GT").mkdir(parents=True, exist_ok=True)
    p = params or SceneParams()
    records = []
    for i in range(n):
        image_id = f"scene_{i:04d}"
        s = seed * 100003 + i
        scene = gen_scene(s, p)
        Image.fromarray(scene.image).save(root / "Image" / f"{image_id}.png")
        (root / "GT" / f"{image_id}.png").write_bytes(mask_to_png(scene.gt))
        records.append({"image_id": image_id, "seed": s, "params": asdict(p)})
    (root / SCENES_FILE).write_text(json.dumps({"scenes": records}, indent=1))
    return [r["image_id"] for r in records]


def load_scene_records(path: str | Path) -> list[PlantedScene]:
    doc = json.loads(Path(path).read_text())
    return [gen_scene(r["seed"], SceneParams(**r["params"])) for r in doc["scenes"]]
