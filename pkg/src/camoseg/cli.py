"""``camoseg`` command line: run, bench, ablate, score, viz, validate, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .datasets import EXPECTED_COUNTS, LAYOUTS, DatasetError, load_manifest, validate_manifest
from .geometry import binary_mask_from_png, load_image, mask_to_png, soft_mask_from_png
from .metrics import evaluate_pairs, format_table
from .pipeline import (
    PipelineConfig,
    PipelineTrace,
    build_clients,
    build_mock_clients,
    read_traces,
    render_overlay,
    run_ablation,
    run_benchmark,
    run_pipeline,
)

log = logging.getLogger("camoseg")

_OVERRIDES = {
    "prompt_stage": str, "n_paraphrases": int, "strategy": str, "k": int, "c": int,
    "short_side": int, "patch_size": int, "detector": str, "extractor": str, "segmenter": str,
    "cache_dir": str, "workers": int, "fallback_policy": str, "seed": int, "retries": int,
}


def _config(args) -> PipelineConfig:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    for name in _OVERRIDES:
        v = getattr(args, name, None)
        if v is not None:
            d[name] = v
    if getattr(args, "no_completion", False):
        d["visual_completion"] = False
    if getattr(args, "include_initial", False):
        d["include_initial"] = True
    if getattr(args, "prompt_box", False):
        d["prompt_box"] = True
    return PipelineConfig.from_dict(d)


def _find_scenes(start: Path, explicit: str | None) -> Path:
    from .mocklab.scenes import SCENES_FILE

    if explicit:
        return Path(explicit)
    for d in [start, *start.parents][:4]:
        if (d / SCENES_FILE).is_file():
            return d / SCENES_FILE
    raise SystemExit(f"--mock: no {SCENES_FILE} found near {start}; pass --scenes")


def _clients(args, cfg: PipelineConfig, near: Path):
    if args.mock:
        from .mocklab.services import MockWorld

        return build_mock_clients(cfg, MockWorld.from_file(_find_scenes(near, args.scenes)))
    return build_clients(cfg)


def _manifest(args):
    expected = EXPECTED_COUNTS.get(args.layout) if args.strict_count else None
    return load_manifest(args.root, args.layout, expected)


def cmd_run(args) -> int:
    cfg = _config(args)
    image_path = Path(args.image)
    clients = _clients(args, cfg, image_path.parent)
    image = load_image(image_path)
    mask, trace = run_pipeline(image, cfg, clients, image_path.stem)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{image_path.stem}_mask.png").write_bytes(mask_to_png(mask))
    (out / f"{image_path.stem}_overlay.png").write_bytes(render_overlay(image, trace, mask))
    trace.image_path = str(image_path)
    trace.mask_path = str(out / f"{image_path.stem}_mask.png")
    (out / f"{image_path.stem}_trace.json").write_text(json.dumps(trace.to_dict(), indent=1, sort_keys=True))
    print(f"{trace.image_id}: {trace.status}" + (f" ({trace.error})" if trace.error else ""))
    return 0 if trace.status != "failed" else 1


def cmd_bench(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args)
    clients = _clients(args, cfg, Path(args.root))
    report = run_benchmark(manifest, cfg, clients, args.out, label=args.label or manifest.dataset_id)
    print(format_table([report]))
    if report.failed:
        print(f"{len(report.failed)} image(s) failed; see {args.out}/report.json", file=sys.stderr)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args)
    clients = _clients(args, cfg, Path(args.root))
    reports = run_ablation(manifest, cfg, clients, args.out)
    print(format_table(reports))
    print(f"detector calls: {clients.detector.calls}")
    return 0


def cmd_score(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    gts = {p.stem: p for p in sorted(gt_dir.iterdir()) if p.is_file()}
    pairs, missing = [], []
    for p in sorted(pred_dir.iterdir()):
        if not p.is_file() or p.suffix.lower() != ".png":
            continue
        gt = gts.get(p.stem)
        if gt is None:
            missing.append(p.name)
            continue
        pairs.append((soft_mask_from_png(p.read_bytes()), binary_mask_from_png(gt.read_bytes()), p.stem))
    if missing:
        log.warning("%d prediction(s) without ground truth: %s", len(missing), ", ".join(missing[:5]))
    if not pairs:
        print("no prediction/ground-truth pairs found", file=sys.stderr)
        return 2
    report = evaluate_pairs(pairs, args.dataset_id or gt_dir.name, args.label or "")
    print(format_table([report]))
    if args.out:
        Path(args.out).write_text(report.to_json())
    return 0


def cmd_viz(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(args.trace)
    if path.suffix == ".jsonl":
        traces = read_traces(path)
    else:
        traces = [PipelineTrace.from_dict(json.loads(path.read_text()))]
    n = 0
    for t in traces:
        if not t.image_path:
            log.warning("%s: trace has no image path, skipped", t.image_id)
            continue
        image = load_image(t.image_path)
        mask = soft_mask_from_png(Path(t.mask_path).read_bytes()) if t.mask_path and Path(t.mask_path).is_file() else None
        target = out / f"{t.image_id}_overlay.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(render_overlay(image, t, mask))
        n += 1
    print(f"wrote {n} overlay(s) to {out}")
    return 0


def cmd_validate(args) -> int:
    manifest = _manifest(args)
    rep = validate_manifest(manifest)
    print(f"{manifest.dataset_id}: {len(manifest)} pairs, {len(rep.failures)} failure(s), "
          f"{len(manifest.warnings)} unmatched image(s)")
    for k, v in sorted(rep.failures.items()):
        print(f"  FAIL {k}: {v}")
    for k, v in sorted(rep.notes.items()):
        print(f"  note {k}: {v}")
    return 0 if rep.ok else 1


def cmd_synth(args) -> int:
    from .mocklab.scenes import SceneParams, write_synthetic_dataset

    params = SceneParams(shape=args.shape, size_frac=args.size_frac, noise_sigma=args.noise_sigma,
                         separation=args.separation)
    ids = write_synthetic_dataset(args.root, args.n, args.seed, params)
    print(f"wrote {len(ids)} scenes to {args.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="camoseg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, services=True):
        p.add_argument("--mock", action="store_true", help="use the offline mock services")
        p.add_argument("--scenes", help="scenes.json for --mock (default: searched near the input)")
        if not services:
            return
        p.add_argument("--config", help="JSON config file; flags override it")
        for name, typ in _OVERRIDES.items():
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
        p.add_argument("--no-completion", action="store_true", help="prompt the segmenter with P_I only")
        p.add_argument("--include-initial", action="store_true")
        p.add_argument("--prompt-box", action="store_true", help="also pass the box to the segmenter")

    def dataset(p):
        p.add_argument("root")
        p.add_argument("--layout", choices=LAYOUTS, default="generic")
        p.add_argument("--strict-count", action="store_true", help="require the published test-set size")

    p = sub.add_parser("run", help="one image: mask, overlay and trace")
    p.add_argument("image")
    p.add_argument("--out", default="camoseg_out")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="benchmark a dataset")
    dataset(p)
    p.add_argument("--out", default="camoseg_bench")
    p.add_argument("--label")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="six-row prompt-stage ablation")
    dataset(p)
    p.add_argument("--out", default="camoseg_ablation")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("score", help="score existing masks, no services")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--dataset-id")
    p.add_argument("--label")
    p.add_argument("--out", help="write the report JSON here")
    common(p, services=False)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("viz", help="re-render overlays from a trace or traces.jsonl")
    p.add_argument("trace")
    p.add_argument("--out", default="camoseg_viz")
    common(p, services=False)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("validate", help="decode and size-check every pair")
    dataset(p)
    common(p, services=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a planted synthetic dataset")
    p.add_argument("root")
    p.add_argument("-n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shape", choices=("ellipse", "blob"), default="ellipse")
    p.add_argument("--size-frac", type=float, default=0.1)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--separation", type=float, default=1.0)
    common(p, services=False)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
