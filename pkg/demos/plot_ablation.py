"""
Six-row prompt ablation on synthetic scenes
===========================================

Rows 1 to 5 add prompt stages one at a time and prompt the segmenter with the
box center only; row 6 adds visual completion. The mock detector ignores
wording, so rows 1 to 5 differ only through the jitter each extra prompt
contributes to the median box. Row 6 is where the prompt points change.
"""

import tempfile
from pathlib import Path

from camoseg.datasets import load_manifest
from camoseg.metrics import format_table
from camoseg.mocklab import MockWorld, SceneParams, write_synthetic_dataset
from camoseg.pipeline import MockConfig, PipelineConfig, build_mock_clients, run_ablation

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp) / "synthetic"
    write_synthetic_dataset(root, 40, seed=5, params=SceneParams(size_frac=0.03, noise_sigma=0.2))
    manifest = load_manifest(root)
    cfg = PipelineConfig(mock=MockConfig(box_noise=0.15, seg_threshold=0.6))
    clients = build_mock_clients(cfg, MockWorld.from_file(root / "scenes.json"))
    reports = run_ablation(manifest, cfg, clients, Path(tmp) / "ablation")
    print(format_table(reports))
    # every prompt is sent once per image; later rows reuse the cache
    print(f"detector calls: {clients.detector.calls} for {len(manifest)} images")
