"""Benchmark folder layouts -> (image, ground truth, id) manifests.

Supported layouts (directory names are matched case-insensitively):

* ``camo``, ``cod10k``, ``nc4k``, ``ovcamo``, ``generic``: an image folder
  (``Imgs``, ``Image``, ``Images``, ...) next to a mask folder (``GT``,
  ``GT_Object``, ``masks``, ...), either directly under the root or under a
  ``Test`` subfolder.
* ``moca``: one subfolder per video sequence, each holding its own image and
  mask folders. Frames are treated as independent images.

Ground-truth masks are binarized at 128 when loaded.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

LAYOUTS = ("camo", "cod10k", "nc4k", "moca", "ovcamo", "generic")
EXPECTED_COUNTS = {"camo": 250, "cod10k": 2026, "nc4k": 4121, "ovcamo": 3770}
IMAGE_DIRS = ("imgs", "image", "images", "img", "jpegimages", "frames")
GT_DIRS = ("gt", "gt_object", "gts", "mask", "masks", "annotations")
IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"}
GT_THRESHOLD = 128


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplePair:
    image_path: str
    gt_path: str
    image_id: str
    sequence_id: str | None = None


@dataclass
class DatasetManifest:
    dataset_id: str
    root: str
    pairs: list[SamplePair]
    expected_count: int | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.pairs:
            raise DatasetError(f"no image/mask pairs found under {self.root}")
        if self.expected_count is not None and len(self.pairs) != self.expected_count:
            raise DatasetError(
                f"{self.dataset_id}: found {len(self.pairs)} pairs, expected {self.expected_count}")

    def __len__(self):
        return len(self.pairs)

    def to_json(self) -> str:
        return json.dumps({
            "dataset_id": self.dataset_id,
            "root": self.root,
            "expected_count": self.expected_count,
            "warnings": self.warnings,
            "pairs": [vars(p) for p in self.pairs],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(d["dataset_id"], d["root"], [SamplePair(**p) for p in d["pairs"]],
                   d.get("expected_count"), d.get("warnings", []))


def _byte_key(p: Path) -> bytes:
    return os.fsencode(str(p))


def _find_child(parent: Path, names: tuple[str, ...]) -> Path | None:
    if not parent.is_dir():
        return None
    children = {c.name.lower(): c for c in sorted(parent.iterdir(), key=_byte_key) if c.is_dir()}
    for name in names:
        if name in children:
            return children[name]
    return None


def _find_pair_dirs(root: Path) -> tuple[Path, Path] | None:
    for base in (root, _find_child(root, ("test", "testdataset"))):
        if base is None:
            continue
        img, gt = _find_child(base, IMAGE_DIRS), _find_child(base, GT_DIRS)
        if img is not None and gt is not None:
            return img, gt
    return None


def _images_in(d: Path) -> list[Path]:
    return sorted((p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTS), key=_byte_key)


def _match(img_dir: Path, gt_dir: Path, id_prefix: str, sequence_id: str | None,
           warnings: list[str]) -> list[SamplePair]:
    gts: dict[str, Path] = {}
    for g in _images_in(gt_dir):
        gts.setdefault(g.stem.lower(), g)
    pairs = []
    for im in _images_in(img_dir):
        gt = gts.get(im.stem.lower())
        if gt is None:
            warnings.append(f"no ground truth for {im}")
            continue
        pairs.append(SamplePair(str(im), str(gt), f"{id_prefix}{im.stem}", sequence_id))
    return pairs


def load_manifest(root: str | Path, layout: str = "generic", expected_count: int | None = None,
                  dataset_id: str | None = None) -> DatasetManifest:
    """Discover image/mask pairs under ``root``.

    Images without a mask are left out and listed in ``warnings``.
    ``expected_count`` (see ``EXPECTED_COUNTS``) makes a count mismatch fatal.
    """
    root = Path(root)
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} does not exist")
    warnings: list[str] = []
    pairs: list[SamplePair] = []
    if layout == "moca":
        for seq in sorted((c for c in root.iterdir() if c.is_dir()), key=_byte_key):
            dirs = _find_pair_dirs(seq)
            if dirs is None:
                continue
            pairs.extend(_match(dirs[0], dirs[1], f"{seq.name}/", seq.name, warnings))
    else:
        dirs = _find_pair_dirs(root)
        if dirs is None:
            raise DatasetError(f"{root}: no image/mask folder pair found")
        pairs = _match(dirs[0], dirs[1], "", None, warnings)
    for w in warnings:
        logger.warning(w)
    if not pairs:
        raise DatasetError(f"no image/mask pairs found under {root}")
    dataset_id = dataset_id or (root.name if layout == "generic" else layout)
    return DatasetManifest(dataset_id, str(root), pairs, expected_count, warnings)


@dataclass
class ValidationReport:
    n_checked: int = 0
    failures: dict[str, str] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def _decode(path: str) -> Image.Image:
    with Image.open(path) as im:
        im.load()
        return im.copy()


def validate_manifest(m: DatasetManifest) -> ValidationReport:
    """Decode every pair and check sizes; never raises for bad pairs."""
    report = ValidationReport()
    for pair in m.pairs:
        report.n_checked += 1
        try:
            im = _decode(pair.image_path)
            gt = _decode(pair.gt_path)
        except Exception as exc:
            report.failures[pair.image_id] = f"decode error: {type(exc).__name__}: {exc}"
            continue
        if im.size != gt.size:
            report.failures[pair.image_id] = f"size mismatch: image {im.size} vs mask {gt.size}"
            continue
        if gt.mode not in ("L", "1", "P", "I", "I;16"):
            report.notes[pair.image_id] = f"mask mode {gt.mode} converted to single channel"
        arr = np.asarray(gt.convert("L"))
        if not (arr >= GT_THRESHOLD).any():
            report.notes[pair.image_id] = "mask has no foreground"
    return report
