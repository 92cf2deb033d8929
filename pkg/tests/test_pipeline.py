import json

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from camoseg.datasets import load_manifest
from camoseg.geometry import BinaryMask, ImagePoint, SoftMask, load_image, mask_iou, soft_mask_from_png
from camoseg.mocklab import MockWorld, SceneParams, gen_scene, write_synthetic_dataset
from camoseg.pipeline import (
    ABLATION_LABELS, COLORS, MockConfig, PipelineConfig, PipelineTrace, ablation_configs, build_clients,
    build_mock_clients, read_traces, render_overlay, run_ablation, run_benchmark, run_pipeline,
)
from camoseg.prompts import PromptStage, build_chain
from camoseg.services import FatalServiceError


@pytest.fixture
def exact_dataset(tmp_path):
    root = tmp_path / "synthetic"
    write_synthetic_dataset(root, 6, seed=1, params=SceneParams(cell_aligned=True))
    return root, MockWorld.from_file(root / "scenes.json")


def test_end_to_end_iou(scene, world):
    cfg = PipelineConfig()
    mask, trace = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world), "s")
    assert trace.status == "ok" and len(trace.completion["prompts"]) == 3
    assert mask_iou(BinaryMask(mask.values >= 0.5), scene.gt) >= 0.9
    assert len(trace.queries) == len(build_chain("diverse"))


def test_no_detection_skip(scene, world):
    cfg = PipelineConfig(mock=MockConfig(miss_prob=1.0))
    mask, trace = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world))
    assert trace.status == "no_detection" and "skip" in trace.fallbacks[0]
    assert not mask.values.any() and mask.shape == scene.gt.shape
    assert all(q.get("no_detection") for q in trace.queries)


def test_no_detection_full_frame(scene, world):
    cfg = PipelineConfig(fallback_policy="full_frame_box", mock=MockConfig(miss_prob=1.0))
    mask, trace = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world))
    assert trace.status == "ok" and trace.fallbacks == ["full_frame_box"]
    assert trace.aggregated_box == [0.0, 0.0, 1.0, 1.0] and trace.p_i == [0.5, 0.5]


def test_warm_cache_trace_identical(scene, world, tmp_path):
    cfg = PipelineConfig(cache_dir=str(tmp_path))
    _, cold = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world), "s")
    _, warm = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world), "s")
    assert all(q["cached"] for q in warm.queries)
    a, b = cold.stable_dict(), warm.stable_dict()
    for q in a["queries"]:
        q.pop("cached")
    for q in b["queries"]:
        q.pop("cached")
    assert a == b
    _, warm2 = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world), "s")
    assert json.dumps(warm.stable_dict(), sort_keys=True) == json.dumps(warm2.stable_dict(), sort_keys=True)


def test_service_failure_marks_image_failed(scene, world):
    cfg = PipelineConfig(retries=0)
    clients = build_mock_clients(cfg, world)

    class Broken:
        def describe(self):
            return {"service_id": "broken", "max_concurrency": 1}

        def segment(self, image, points, box=None):
            raise FatalServiceError("boom")

    clients.segmenter = Broken()
    mask, trace = run_pipeline(scene.image, cfg, clients)
    assert trace.status == "failed" and "boom" in trace.error
    assert not mask.values.any()


def test_prompt_box_forwarded(scene, world):
    cfg = PipelineConfig(prompt_box=True, visual_completion=False)
    _, trace = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world))
    assert trace.segment_box == trace.aggregated_box
    assert trace.segment_points == [trace.p_i] and trace.completion is None


def test_benchmark_exact_mocks(exact_dataset, tmp_path):
    root, world = exact_dataset
    cfg = PipelineConfig()
    out = tmp_path / "out"
    rep = run_benchmark(load_manifest(root), cfg, build_mock_clients(cfg, world), out)
    assert rep.n_images == 6
    assert (rep.mean_mae, rep.mean_f_beta_w, rep.mean_s_alpha) == pytest.approx((0.0, 1.0, 1.0), abs=1e-9)
    assert json.loads((out / "report.json").read_text())["dataset_id"] == "synthetic"
    assert "F_beta^w" in (out / "report.txt").read_text()
    traces = read_traces(out / "traces.jsonl")
    assert [t.image_id for t in traces] == sorted(t.image_id for t in traces)
    # written masks read back to the identical soft mask
    for t in traces:
        again = soft_mask_from_png(open(t.mask_path, "rb").read())
        gt = load_image(t.image_path)
        assert again.shape == gt.shape[:2]


def test_mask_png_round_trip(scene, world, tmp_path):
    cfg = PipelineConfig()
    mask, _ = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world))
    from camoseg.geometry import mask_to_png
    assert np.array_equal(soft_mask_from_png(mask_to_png(mask)).values, mask.values)


def test_parallelism_does_not_change_report(tmp_path):
    root = tmp_path / "ds"
    write_synthetic_dataset(root, 12, seed=4, params=SceneParams(noise_sigma=0.2, size_frac=0.03))
    world = MockWorld.from_file(root / "scenes.json")
    m = load_manifest(root)
    reports = []
    for workers in (1, 8):
        cfg = PipelineConfig(workers=workers, mock=MockConfig(box_noise=0.15, seg_threshold=0.6))
        reports.append(run_benchmark(m, cfg, build_mock_clients(cfg, world)))
    assert reports[0] == reports[1]
    assert reports[0].to_json() == reports[1].to_json()


def test_ablation_rows_and_cache_sharing(exact_dataset):
    root, world = exact_dataset
    cfg = PipelineConfig()
    clients = build_mock_clients(cfg, world)
    reports = run_ablation(load_manifest(root), cfg, clients)
    assert [r.label for r in reports] == list(ABLATION_LABELS)
    assert clients.detector.calls == 6 * len(build_chain(PromptStage.DIVERSE))


def test_ablation_configs():
    rows = ablation_configs(PipelineConfig(n_paraphrases=2))
    assert [r.visual_completion for r in rows] == [False] * 5 + [True]
    assert [r.prompt_stage for r in rows[:5]] == [s.key for s in PromptStage]
    assert rows[5].prompt_stage == rows[4].prompt_stage and rows[5].n_paraphrases == 2
    assert rows[0].n_paraphrases == 0


def test_ablation_rejects_non_cumulative_stages(exact_dataset, monkeypatch):
    root, world = exact_dataset
    import camoseg.pipeline as pl
    monkeypatch.setattr(pl, "build_chain", lambda stage: build_chain("baseline"))
    cfg = PipelineConfig()
    with pytest.raises(AssertionError):
        run_ablation(load_manifest(root), cfg, build_mock_clients(cfg, world))


def _components(png: bytes, color) -> int:
    arr = np.asarray(Image.open(__import__("io").BytesIO(png)).convert("RGB"))
    hit = (arr == np.array(color, np.uint8)).all(axis=2)
    return ndimage.label(hit)[1]


def test_overlay_marker_counts_and_determinism():
    img = np.full((200, 200, 3), 120, np.uint8)
    trace = PipelineTrace(
        image_id="t", aggregated_box=[0.1, 0.1, 0.9, 0.9], p_i=[0.5, 0.5],
        completion={"prompts": [[0.2, 0.2], [0.8, 0.3], [0.3, 0.8]]},
    )
    m = np.zeros((200, 200))
    m[60:140, 60:140] = 1.0
    png = render_overlay(img, trace, SoftMask(m))
    assert _components(png, COLORS["p_c"]) == 3
    assert _components(png, COLORS["p_i"]) == 1
    assert _components(png, COLORS["contour"]) == 1
    assert render_overlay(img, trace, SoftMask(m)) == png


def test_overlay_no_detection_banner(scene, world):
    cfg = PipelineConfig(mock=MockConfig(miss_prob=1.0))
    mask, trace = run_pipeline(scene.image, cfg, build_mock_clients(cfg, world))
    png = render_overlay(scene.image, trace, mask)
    assert _components(png, COLORS["banner"]) > 0
    assert _components(png, COLORS["p_i"]) == 0


def test_config_validation(tmp_path, monkeypatch):
    for bad in ({"strategy": "vote"}, {"fallback_policy": "guess"}, {"k": 0}, {"c": 0}, {"workers": 0},
                {"prompt_stage": "x"}, {"detector": " "}, {"bogus": 1}):
        with pytest.raises((ValueError, TypeError)):
            PipelineConfig.from_dict(bad)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"k": 12, "mock": {"box_noise": 0.1}}))
    cfg = PipelineConfig.from_file(p, c=2)
    assert (cfg.k, cfg.c, cfg.mock.box_noise) == (12, 2, 0.1)
    monkeypatch.setenv("CAMOSEG_CACHE_DIR", str(tmp_path))
    assert PipelineConfig().cache_dir == str(tmp_path)
    with pytest.raises(ValueError):
        build_clients(PipelineConfig())
