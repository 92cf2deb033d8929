import json

import pytest

from camoseg.cli import main
from camoseg.metrics import EvalReport


@pytest.fixture
def dataset(tmp_path):
    root = tmp_path / "ds"
    assert main(["synth", str(root), "-n", "3", "--seed", "2"]) == 0
    return root


def test_bench_and_score(dataset, tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", str(dataset), "--mock", "--out", str(out), "--workers", "2"]) == 0
    table = capsys.readouterr().out
    assert "F_beta^w" in table
    rep = EvalReport.from_dict(json.loads((out / "report.json").read_text()))
    assert rep.n_images == 3
    assert len((out / "traces.jsonl").read_text().splitlines()) == 3
    score_out = tmp_path / "score.json"
    assert main(["score", "--pred-dir", str(out / "masks"), "--gt-dir", str(dataset / "GT"),
                 "--out", str(score_out)]) == 0
    again = EvalReport.from_dict(json.loads(score_out.read_text()))
    assert again.mean_f_beta_w == pytest.approx(rep.mean_f_beta_w)


def test_run_and_viz(dataset, tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(dataset / "Image" / "scene_0000.png"), "--mock", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["scene_0000_mask.png", "scene_0000_overlay.png", "scene_0000_trace.json"]
    viz = tmp_path / "viz"
    assert main(["viz", str(out / "scene_0000_trace.json"), "--out", str(viz)]) == 0
    assert (viz / "scene_0000_overlay.png").read_bytes() == (out / "scene_0000_overlay.png").read_bytes()


def test_ablate(dataset, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", str(dataset), "--mock", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "6. Baseline+PA+DA+Polysemy+Diverse+VC" in text
    assert "detector calls: 15" in text
    assert len(json.loads((out / "ablation.json").read_text())) == 6


def test_config_file_and_overrides(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"prompt_stage": "baseline", "mock": {"miss_prob": 1.0}}))
    out = tmp_path / "b"
    assert main(["bench", str(dataset), "--mock", "--config", str(cfg), "--out", str(out)]) == 0
    traces = [json.loads(line) for line in (out / "traces.jsonl").read_text().splitlines()]
    assert all(t["status"] == "no_detection" and len(t["prompts"]) == 1 for t in traces)
    assert main(["bench", str(dataset), "--mock", "--config", str(cfg), "--fallback-policy", "full_frame_box",
                 "--out", str(out)]) == 0
    traces = [json.loads(line) for line in (out / "traces.jsonl").read_text().splitlines()]
    assert all(t["fallbacks"] == ["full_frame_box"] for t in traces)


def test_validate(dataset, capsys):
    assert main(["validate", str(dataset)]) == 0
    assert "3 pairs, 0 failure(s)" in capsys.readouterr().out
    gt = dataset / "GT" / "scene_0001.png"
    gt.write_bytes(gt.read_bytes()[:20])
    assert main(["validate", str(dataset)]) == 1


def test_errors(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope")]) == 2
    assert main(["bench", str(tmp_path), "--k", "0", "--mock"]) == 2
    with pytest.raises(SystemExit):
        main(["bench", str(tmp_path), "--layout", "nope"])
