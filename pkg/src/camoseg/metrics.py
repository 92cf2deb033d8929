"""Foreground-map metrics: MAE, weighted F-measure and structure measure.

Predictions are soft maps in [0, 1], scored without thresholding; ground
truth is boolean. Constants follow the metrics' reference MATLAB code:
beta^2 = 1, a 7x7 Gaussian with sigma 5, background importance
``2 - exp(ln(0.5) / 5 * d)``, and alpha = 0.5.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .geometry import BinaryMask, SoftMask, resize_soft_mask

logger = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
BETA2 = 1.0
ALPHA = 0.5
GAUSS_SIZE = 7
GAUSS_SIGMA = 5.0


class EmptyGroundTruth(ValueError):
    """The weighted F-measure is undefined without foreground pixels."""


def _arrays(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = pred.values if isinstance(pred, SoftMask) else np.asarray(pred, dtype=np.float64)
    g = gt.values if isinstance(gt, BinaryMask) else np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in size")
    return p.astype(np.float64, copy=False), g


def mae(pred, gt) -> float:
    p, g = _arrays(pred, gt)
    return float(np.mean(np.abs(p - g)))


# --- weighted F-measure ------------------------------------------------------

def gaussian_kernel(size: int = GAUSS_SIZE, sigma: float = GAUSS_SIGMA) -> np.ndarray:
    """Same construction as MATLAB ``fspecial('gaussian', size, sigma)``."""
    m = (size - 1) / 2
    y, x = np.ogrid[-m:m + 1, -m:m + 1]
    h = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    h[h < EPS * h.max()] = 0
    return h / h.sum()


def nearest_foreground(gt: np.ndarray, within: np.ndarray | None = None
                       ) -> tuple[np.ndarray, np.ndarray, dict[int, np.ndarray]]:
    """Exact Euclidean distance to the nearest foreground pixel, plus who that is.

    Returns ``(dist, nearest, ties)``: ``nearest`` holds one nearest
    foreground flat index per pixel (foreground maps to itself) and ``ties``
    maps each background pixel with several equidistant nearest pixels to all
    of them, sorted. If ``within`` is given, nearest pixels are resolved only
    for background inside it; distances are always computed everywhere.
    """
    dist = ndimage.distance_transform_edt(~gt)
    # a nearest foreground pixel always touches the background: one step towards
    # the query would otherwise be strictly closer, so the tree needs only the rim
    rim = gt & ~ndimage.binary_erosion(gt, border_value=1)
    fg_flat = np.flatnonzero(rim)
    nearest = np.arange(gt.size)
    ties: dict[int, np.ndarray] = {}
    bg_flat = np.flatnonzero(~gt if within is None else ~gt & within)
    if bg_flat.size:
        w = gt.shape[1]
        tree = cKDTree(np.column_stack(np.divmod(fg_flat, w)))
        bg_pts = np.column_stack(np.divmod(bg_flat, w))
        k = min(2, fg_flat.size)
        d, idx = tree.query(bg_pts, k=k)
        d, idx = d.reshape(len(bg_pts), k), idx.reshape(len(bg_pts), k)
        nearest[bg_flat] = fg_flat[idx[:, 0]]
        if k == 2:
            # squared distances are integers, so a small slack captures exactly the ties
            tied = np.flatnonzero(d[:, 1] <= d[:, 0] + 1e-6)
            balls = tree.query_ball_point(bg_pts[tied], r=dist.ravel()[bg_flat[tied]] + 1e-6)
            for i, ball in zip(bg_flat[tied], balls):
                ties[int(i)] = np.sort(fg_flat[ball])
    return dist, nearest, ties


def weighted_fbeta(pred, gt, beta2: float = BETA2) -> float:
    p, g = _arrays(pred, gt)
    if not g.any():
        raise EmptyGroundTruth("weighted F-measure needs at least one foreground pixel")
    err = np.abs(p - g)
    # background pixels inherit the error of their nearest foreground pixel; only
    # those within the smoothing window of the foreground can affect the score
    near = ndimage.binary_dilation(g, structure=np.ones((7, 7), dtype=bool))
    dist, nearest, ties = nearest_foreground(g, near)
    flat_err = err.ravel()
    err_t = flat_err[nearest]
    # equidistant nearest pixels share the blame equally, which keeps the
    # score invariant under flips and transposition of the grid
    for i, members in ties.items():
        err_t[i] = flat_err[members].mean()
    err_t = err_t.reshape(err.shape)
    err_a = ndimage.convolve(err_t, gaussian_kernel(), mode="constant", cval=0.0)
    min_e = np.where(g & (err_a < err), err_a, err)
    importance = np.where(g, 1.0, 2.0 - np.exp(math.log(0.5) / 5.0 * dist))
    ew = min_e * importance

    tp_w = g.sum() - ew[g].sum()
    fp_w = ew[~g].sum()
    recall = 1.0 - ew[g].mean()
    precision = tp_w / (tp_w + fp_w + EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + EPS))


# --- structure measure -------------------------------------------------------

def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    mean = x.mean()
    std = x.std(ddof=1) if x.size > 1 else 0.0
    return float(2.0 * mean / (mean * mean + 1.0 + std + EPS))


def s_object(p: np.ndarray, g: np.ndarray) -> float:
    u = g.mean()
    fg = _object_score(p[g])
    bg = _object_score(1.0 - p[~g])
    return float(u * fg + (1 - u) * bg)


def centroid(g: np.ndarray) -> tuple[int, int]:
    """1-based (col, row) of the foreground centroid, rounded half-up."""
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return int(math.floor(w / 2 + 0.5)), int(math.floor(h / 2 + 0.5))
    rows, cols = np.nonzero(g)
    x = math.floor((cols + 1).sum() / total + 0.5)
    y = math.floor((rows + 1).sum() / total + 0.5)
    return int(x), int(y)


def ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x = p.mean()
    y = g.mean()
    sx = ((p - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return float(a / (b + EPS))
    if b == 0:
        return 1.0
    return 0.0


def s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    x, y = centroid(g)
    area = h * w
    gf = g.astype(np.float64)
    parts = [
        (x * y / area, p[:y, :x], gf[:y, :x]),
        ((w - x) * y / area, p[:y, x:], gf[:y, x:]),
        (x * (h - y) / area, p[y:, :x], gf[y:, :x]),
    ]
    parts.append((1.0 - sum(wt for wt, _, _ in parts), p[y:, x:], gf[y:, x:]))
    return float(sum(wt * ssim(pp, gg) for wt, pp, gg in parts if pp.size))


def s_measure(pred, gt, alpha: float = ALPHA) -> float:
    p, g = _arrays(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1.0 - p.mean())
    if y == 1:
        return float(p.mean())
    score = alpha * s_object(p, g) + (1 - alpha) * s_region(p, g)
    return float(max(0.0, score))


# --- reports -----------------------------------------------------------------

@dataclass(frozen=True)
class ImageScore:
    image_id: str
    mae: float
    f_beta_w: float
    s_alpha: float


def score_image(pred, gt, image_id: str) -> ImageScore:
    return ImageScore(image_id, mae(pred, gt), weighted_fbeta(pred, gt), s_measure(pred, gt))


@dataclass
class EvalReport:
    dataset_id: str
    per_image: list[ImageScore] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    label: str = ""

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    def _mean(self, attr: str) -> float:
        if not self.per_image:
            return float("nan")
        vals = [getattr(s, attr) for s in sorted(self.per_image, key=lambda s: s.image_id)]
        return math.fsum(vals) / len(vals)

    @property
    def mean_mae(self) -> float:
        return self._mean("mae")

    @property
    def mean_f_beta_w(self) -> float:
        return self._mean("f_beta_w")

    @property
    def mean_s_alpha(self) -> float:
        return self._mean("s_alpha")

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "label": self.label,
            "n_images": self.n_images,
            "mean_f_beta_w": self.mean_f_beta_w,
            "mean_s_alpha": self.mean_s_alpha,
            "mean_mae": self.mean_mae,
            "per_image": [asdict(s) for s in sorted(self.per_image, key=lambda s: s.image_id)],
            "skipped": dict(sorted(self.skipped.items())),
            "failed": dict(sorted(self.failed.items())),
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            dataset_id=d["dataset_id"],
            per_image=[ImageScore(**s) for s in d["per_image"]],
            skipped=dict(d.get("skipped", {})),
            failed=dict(d.get("failed", {})),
            label=d.get("label", ""),
        )

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def format_table(reports: Iterable[EvalReport]) -> str:
    """Aligned plain-text table, columns F_beta^w, S_alpha, MAE."""
    reports = list(reports)
    rows = [("Method", "Dataset", "N", "F_beta^w", "S_alpha", "MAE")]
    for r in reports:
        rows.append((r.label or "-", r.dataset_id, str(r.n_images), f"{r.mean_f_beta_w:.3f}",
                     f"{r.mean_s_alpha:.3f}", f"{r.mean_mae:.3f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells += [c.rjust(wd) for c, wd in zip(row[2:], widths[2:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * wd for wd in widths))
    return "\n".join(lines)


def evaluate_pairs(pairs: Iterable[tuple[SoftMask, BinaryMask, str]], dataset_id: str = "",
                   label: str = "") -> EvalReport:
    """Score (prediction, ground truth, id) triples.

    Predictions whose size differs from the ground truth are resized
    bilinearly first. Images with empty ground truth are skipped with a reason.
    """
    report = EvalReport(dataset_id=dataset_id, label=label)
    for pred, gt, image_id in sorted(pairs, key=lambda t: t[2]):
        if pred.shape != gt.shape:
            pred = resize_soft_mask(pred, gt.height, gt.width)
        if not gt.values.any():
            report.skipped[image_id] = "empty ground truth"
            logger.info("skipping %s: empty ground truth", image_id)
            continue
        report.per_image.append(score_image(pred, gt, image_id))
    if not report.per_image and not report.skipped:
        raise ValueError("no pairs to evaluate")
    return report
