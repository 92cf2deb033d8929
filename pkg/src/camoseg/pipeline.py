"""End-to-end pipeline, dataset benchmark, prompt-stage ablation and overlays."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .completion import FeatureCache, FeatureExtractor, RemoteExtractor, ResizePolicy, complete, extract_features
from .datasets import DatasetManifest, SamplePair
from .detector import (
    STRATEGIES,
    DetectorClient,
    NoDetection,
    RemoteDetector,
    ResponseCache,
    aggregate_detections,
    parse_boxes,
    prompt_sha256,
)
from .geometry import (
    FULL_FRAME,
    BoundingBox,
    ImagePoint,
    SoftMask,
    binary_mask_from_png,
    bbox_center,
    load_image,
    mask_to_png,
    quantize,
)
from .metrics import EvalReport, evaluate_pairs, format_table
from .prompts import Paraphraser, PromptStage, build_chain, paraphrase_expand
from .segmenter import RemoteSegmenter, SegmenterService, binarize, segment, select_mask
from .services import ServiceError, image_sha256

logger = logging.getLogger(__name__)

CACHE_ENV = "CAMOSEG_CACHE_DIR"
FALLBACKS = ("skip", "full_frame_box")
ABLATION_LABELS = (
    "1. Baseline",
    "2. Baseline+PA",
    "3. Baseline+PA+DA",
    "4. Baseline+PA+DA+Polysemy",
    "5. Baseline+PA+DA+Polysemy+Diverse",
    "6. Baseline+PA+DA+Polysemy+Diverse+VC",
)


@dataclass(frozen=True)
class MockConfig:
    box_noise: float = 0.0
    miss_prob: float = 0.0
    seg_threshold: float = 0.7


@dataclass(frozen=True)
class PipelineConfig:
    prompt_stage: str = "diverse"
    n_paraphrases: int = 0
    strategy: str = "median_box"
    visual_completion: bool = True
    k: int | None = None
    c: int = 3
    include_initial: bool = False
    prompt_box: bool = False
    short_side: int = 448
    patch_size: int = 14
    detector: str | None = None
    extractor: str | None = None
    segmenter: str | None = None
    timeout: float = 120.0
    retries: int = 2
    backoff: float = 0.5
    cache_dir: str | None = field(default_factory=lambda: os.environ.get(CACHE_ENV))
    workers: int = 1
    fallback_policy: str = "skip"
    seed: int = 0
    mock: MockConfig = field(default_factory=MockConfig)

    def __post_init__(self):
        PromptStage.parse(self.prompt_stage)
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.fallback_policy not in FALLBACKS:
            raise ValueError(f"fallback_policy must be one of {FALLBACKS}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.c < 1 or self.n_paraphrases < 0 or self.workers < 1 or self.retries < 0:
            raise ValueError("c >= 1, n_paraphrases >= 0, workers >= 1 and retries >= 0 required")
        if self.short_side < self.patch_size or self.patch_size < 1:
            raise ValueError("short_side must be at least one patch")
        for name in ("detector", "extractor", "segmenter"):
            ep = getattr(self, name)
            if ep is not None and not str(ep).strip():
                raise ValueError(f"{name} endpoint is empty")
        if isinstance(self.mock, dict):
            object.__setattr__(self, "mock", MockConfig(**self.mock))

    @property
    def resize_policy(self) -> ResizePolicy:
        return ResizePolicy(self.short_side, self.patch_size)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "PipelineConfig":
        d = json.loads(Path(path).read_text())
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Clients:
    detector: DetectorClient
    extractor: FeatureExtractor
    segmenter: SegmenterService
    paraphraser: Paraphraser | None = None
    feature_cache: FeatureCache | None = None

    def concurrency_cap(self) -> int:
        caps = [s.describe().get("max_concurrency", 1)
                for s in (self.detector.service, self.extractor, self.segmenter)]
        return max(1, min(caps))


def build_clients(cfg: PipelineConfig) -> Clients:
    """Remote adapters for the three services named in ``cfg``."""
    missing = [n for n in ("detector", "extractor", "segmenter") if getattr(cfg, n) is None]
    if missing:
        raise ValueError(f"no endpoint configured for: {', '.join(missing)} (or use --mock)")
    cache = ResponseCache(cfg.cache_dir)
    return Clients(
        detector=DetectorClient(RemoteDetector(cfg.detector, timeout=cfg.timeout), cache,
                                cfg.retries, cfg.backoff),
        extractor=RemoteExtractor(cfg.extractor, cfg.resize_policy, timeout=cfg.timeout),
        segmenter=RemoteSegmenter(cfg.segmenter, timeout=cfg.timeout),
        feature_cache=FeatureCache(Path(cfg.cache_dir) / "features") if cfg.cache_dir else None,
    )


def build_mock_clients(cfg: PipelineConfig, world) -> Clients:
    from .mocklab.services import MockDetector, MockExtractor, MockSegmenter

    m = cfg.mock
    return Clients(
        detector=DetectorClient(MockDetector(world, m.box_noise, m.miss_prob, cfg.seed),
                                ResponseCache(cfg.cache_dir), cfg.retries, 0.0),
        extractor=MockExtractor(world),
        segmenter=MockSegmenter(world, m.seg_threshold),
    )


# --- traces ------------------------------------------------------------------

@dataclass
class PipelineTrace:
    image_id: str
    status: str = "ok"  # ok | no_detection | failed
    prompts: list[str] = field(default_factory=list)
    chain_id: str = ""
    chain_provenance: list[str] = field(default_factory=list)
    queries: list[dict] = field(default_factory=list)
    aggregated_box: list[float] | None = None
    p_i: list[float] | None = None
    completion: dict | None = None
    segment_points: list[list[float]] = field(default_factory=list)
    segment_box: list[float] | None = None
    mask_sha256: str | None = None
    mask_path: str | None = None
    image_path: str | None = None
    fallbacks: list[str] = field(default_factory=list)
    error: str | None = None
    latencies_ms: dict[str, float] = field(default_factory=dict)
    timestamp: str = ""

    VOLATILE = ("latencies_ms", "timestamp")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def stable_dict(self) -> dict:
        """Everything except wall-clock fields."""
        d = self.to_dict()
        for k in self.VOLATILE:
            d.pop(k)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineTrace":
        return cls(**d)


def write_traces(traces: Sequence[PipelineTrace], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in sorted(traces, key=lambda t: t.image_id):
            fh.write(t.to_json() + "\n")


def read_traces(path: str | Path) -> list[PipelineTrace]:
    with Path(path).open(encoding="utf-8") as fh:
        return [PipelineTrace.from_dict(json.loads(line)) for line in fh if line.strip()]


def _pt(p: ImagePoint) -> list[float]:
    return [p.x, p.y]


# --- single image ------------------------------------------------------------

def _locate(image, cfg: PipelineConfig, clients: Clients, trace: PipelineTrace) -> tuple[BoundingBox, ImagePoint]:
    chain = build_chain(cfg.prompt_stage)
    if cfg.n_paraphrases:
        chain = paraphrase_expand(chain, cfg.n_paraphrases, clients.paraphraser)
    trace.prompts = chain.texts
    trace.chain_id = chain.chain_id
    trace.chain_provenance = list(chain.provenance)

    per_prompt = []
    img_hash = image_sha256(image)
    for i, text in enumerate(chain.texts):
        reply = clients.detector.query(image, text)
        rec: dict[str, Any] = {
            "prompt_index": i,
            "image_sha256": img_hash,
            "prompt_sha256": prompt_sha256(text),
            "service_id": clients.detector.service_id,
            "cached": reply.cached,
        }
        try:
            dets = parse_boxes(reply.raw_text, i)
        except NoDetection:
            dets = []
            rec["no_detection"] = True
        rec["detections"] = [{"box": list(d.box.as_tuple()), "parse": d.parse_confidence} for d in dets]
        if len(dets) > 1:
            logger.debug("%s prompt %d: %d boxes, using the first", trace.image_id, i, len(dets))
        trace.queries.append(rec)
        per_prompt.append(dets)
    return aggregate_detections(per_prompt, cfg.strategy)


def run_pipeline(image, cfg: PipelineConfig, clients: Clients, image_id: str = "image",
                 ) -> tuple[SoftMask, PipelineTrace]:
    """Detector prompts -> box -> visual completion -> segmentation -> one mask.

    The returned mask is quantized to 8-bit levels, so writing it as PNG and
    reading it back gives the same values. Service failures do not raise:
    the trace is marked ``failed`` and an empty mask is returned.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    trace = PipelineTrace(image_id=image_id, timestamp=datetime.now(timezone.utc).isoformat())
    lat = trace.latencies_ms
    try:
        t0 = time.perf_counter()
        try:
            box, p_i = _locate(image, cfg, clients, trace)
        except NoDetection as exc:
            if cfg.fallback_policy == "skip":
                trace.status = "no_detection"
                trace.error = str(exc)
                trace.fallbacks.append("skip: empty mask")
                lat["detect"] = (time.perf_counter() - t0) * 1e3
                mask = SoftMask.empty(h, w)
                trace.mask_sha256 = hashlib.sha256(mask_to_png(mask)).hexdigest()
                return mask, trace
            box, p_i = FULL_FRAME, bbox_center(FULL_FRAME)
            trace.fallbacks.append("full_frame_box")
        lat["detect"] = (time.perf_counter() - t0) * 1e3
        trace.aggregated_box = list(box.as_tuple())
        trace.p_i = _pt(p_i)

        points = [p_i]
        if cfg.visual_completion:
            t0 = time.perf_counter()
            fm = _features(image, cfg, clients)
            res = complete(fm, p_i, cfg.k, cfg.c, cfg.include_initial)
            params = dict(res.params, resize_policy=cfg.resize_policy.as_dict())
            trace.completion = {
                "params": params,
                "candidates": [[r, c, s] for (r, c), s in res.candidates],
                "prompts": [_pt(p) for p in res.prompts],
            }
            points = res.prompts
            lat["complete"] = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        seg_box = box if cfg.prompt_box else None
        trace.segment_points = [_pt(p) for p in points]
        trace.segment_box = list(seg_box.as_tuple()) if seg_box else None
        cands = segment(clients.segmenter, image, points, seg_box, cfg.retries, cfg.backoff)
        mask = quantize(select_mask(cands))
        lat["segment"] = (time.perf_counter() - t0) * 1e3
    except (ServiceError, OSError, ValueError) as exc:
        logger.error("%s failed: %s", image_id, exc)
        trace.status = "failed"
        trace.error = f"{type(exc).__name__}: {exc}"
        mask = SoftMask.empty(h, w)
    trace.mask_sha256 = hashlib.sha256(mask_to_png(mask)).hexdigest()
    return mask, trace


def _features(image, cfg: PipelineConfig, clients: Clients):
    sid = clients.extractor.describe()["service_id"]
    key = image_sha256(image)
    if clients.feature_cache is not None:
        fm = clients.feature_cache.get(key, sid)
        if fm is not None:
            return fm
    fm = extract_features(clients.extractor, image, cfg.retries, cfg.backoff)
    if clients.feature_cache is not None:
        clients.feature_cache.put(key, sid, fm)
    return fm


# --- datasets ----------------------------------------------------------------

@dataclass
class PairResult:
    pair: SamplePair
    mask: SoftMask
    trace: PipelineTrace


def _mask_file(out_dir: Path, image_id: str) -> Path:
    p = out_dir / "masks" / f"{image_id}.png"
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def run_dataset(manifest: DatasetManifest, cfg: PipelineConfig, clients: Clients,
                out_dir: str | Path | None = None) -> list[PairResult]:
    """Run the pipeline on every pair with at most ``cfg.workers`` threads."""
    out = Path(out_dir) if out_dir is not None else None

    def one(pair: SamplePair) -> PairResult:
        try:
            image = load_image(pair.image_path)
        except OSError as exc:
            trace = PipelineTrace(image_id=pair.image_id, status="failed", image_path=pair.image_path,
                                  error=f"image decode: {exc}")
            return PairResult(pair, SoftMask.empty(1, 1), trace)
        mask, trace = run_pipeline(image, cfg, clients, pair.image_id)
        trace.image_path = pair.image_path
        if out is not None:
            mp = _mask_file(out, pair.image_id)
            mp.write_bytes(mask_to_png(mask))
            trace.mask_path = str(mp)
        return PairResult(pair, mask, trace)

    workers = max(1, min(cfg.workers, clients.concurrency_cap()))
    if workers == 1:
        results = [one(p) for p in manifest.pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, manifest.pairs))
    results.sort(key=lambda r: r.pair.image_id)
    if out is not None:
        write_traces([r.trace for r in results], out / "traces.jsonl")
    return results


def score_results(results: Sequence[PairResult], dataset_id: str, label: str = "") -> EvalReport:
    scored = []
    failed = {}
    for r in results:
        if r.trace.status == "failed":
            failed[r.pair.image_id] = r.trace.error or "failed"
            continue
        scored.append((r.mask, binary_mask_from_png(r.pair.gt_path), r.pair.image_id))
    if scored:
        report = evaluate_pairs(scored, dataset_id, label)
    else:
        report = EvalReport(dataset_id=dataset_id, label=label)
    report.failed.update(failed)
    return report


def run_benchmark(manifest: DatasetManifest, cfg: PipelineConfig, clients: Clients,
                  out_dir: str | Path | None = None, label: str = "") -> EvalReport:
    results = run_dataset(manifest, cfg, clients, out_dir)
    report = score_results(results, manifest.dataset_id, label)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "report.json").write_text(report.to_json())
        (out / "report.txt").write_text(format_table([report]) + "\n")
    return report


def ablation_configs(cfg: PipelineConfig) -> list[PipelineConfig]:
    """Rows 1-5: cumulative prompt stages, box center only. Row 6: row 5 plus completion."""
    rows = [cfg.replace(prompt_stage=s.key, visual_completion=False,
                        n_paraphrases=cfg.n_paraphrases if s == PromptStage.DIVERSE else 0)
            for s in PromptStage]
    rows.append(rows[-1].replace(visual_completion=True))
    return rows


def _row_prompts(cfg: PipelineConfig, clients: Clients) -> list[str]:
    chain = build_chain(cfg.prompt_stage)
    if cfg.n_paraphrases:
        chain = paraphrase_expand(chain, cfg.n_paraphrases, clients.paraphraser)
    return chain.texts


def run_ablation(manifest: DatasetManifest, cfg: PipelineConfig, clients: Clients,
                 out_dir: str | Path | None = None) -> list[EvalReport]:
    """Six reports, one per ablation row; the detector cache is shared across rows."""
    rows = ablation_configs(cfg)
    prev: set[str] | None = None
    for row in rows[:5]:
        texts = set(_row_prompts(row, clients))
        if prev is not None and not texts > prev:
            raise AssertionError("ablation prompt sets are not strictly cumulative")
        prev = texts
    reports = []
    for label, row in zip(ABLATION_LABELS, rows):
        row_dir = Path(out_dir) / f"row{label[0]}" if out_dir is not None else None
        reports.append(score_results(run_dataset(manifest, row, clients, row_dir),
                                     manifest.dataset_id, label))
    if out_dir is not None:
        out = Path(out_dir)
        (out / "ablation.json").write_text(json.dumps([r.to_dict() for r in reports], indent=2))
        (out / "ablation.txt").write_text(format_table(reports) + "\n")
    return reports


# --- overlays ----------------------------------------------------------------

COLORS = {
    "contour": (0, 255, 0),
    "box": (255, 200, 0),
    "p_i": (255, 0, 0),
    "p_c": (0, 255, 255),
    "banner": (255, 0, 255),
}


def overlay_markers(trace: PipelineTrace) -> dict[str, list[list[float]]]:
    """Points drawn by :func:`render_overlay`, grouped by role."""
    return {
        "p_i": [trace.p_i] if trace.p_i else [],
        "p_c": list(trace.completion["prompts"]) if trace.completion else [],
    }


def render_overlay(image, trace: PipelineTrace, mask: SoftMask | None = None) -> bytes:
    """Box, initial point (square), completed points (discs) and mask contour as PNG."""
    img = Image.fromarray(np.asarray(image, dtype=np.uint8)).convert("RGB")
    w, h = img.size
    arr = np.array(img)
    if mask is not None and mask.shape == (h, w):
        fg = binarize(mask).values
        edge = fg & ~ndimage.binary_erosion(fg, border_value=0)
        arr[edge] = COLORS["contour"]
    img = Image.fromarray(arr)
    draw = ImageDraw.Draw(img)
    r = max(2, min(w, h) // 80)
    if trace.aggregated_box:
        x1, y1, x2, y2 = trace.aggregated_box
        draw.rectangle([x1 * w, y1 * h, x2 * w - 1, y2 * h - 1], outline=COLORS["box"], width=max(1, r // 2))
    markers = overlay_markers(trace)
    for x, y in markers["p_c"]:
        cx, cy = x * w, y * h
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=COLORS["p_c"])
    for x, y in markers["p_i"]:
        cx, cy = x * w, y * h
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=COLORS["p_i"])
    if trace.status != "ok":
        text = "NO DETECTION" if trace.status == "no_detection" else "FAILED"
        draw.fontmode = "1"  # no antialiasing, so the banner renders identically everywhere
        draw.rectangle([0, 0, w - 1, min(h - 1, 14)], fill=COLORS["banner"])
        draw.text((3, 2), text, fill=(0, 0, 0))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
