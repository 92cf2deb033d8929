"""
Talking to services over the wire
=================================

Real deployments put the detector, feature extractor and segmenter behind
HTTP or a line-delimited JSON pipe. Here the mock services are served over
local HTTP and the pipeline reaches them only through endpoints, exactly as
it would reach GPU-backed models.
"""

import sys
import tempfile
from pathlib import Path

from camoseg.geometry import load_image
from camoseg.mocklab import MockWorld, write_synthetic_dataset
from camoseg.mocklab.serve import build_service, make_http_server, serve_in_thread
from camoseg.pipeline import PipelineConfig, build_clients, run_pipeline

tmp = Path(tempfile.mkdtemp())
write_synthetic_dataset(tmp / "ds", 2, seed=8)
world = MockWorld.from_file(tmp / "ds" / "scenes.json")

endpoints = {}
for kind in ("detector", "extractor", "segmenter"):
    server = make_http_server(kind, build_service(kind, world))
    serve_in_thread(server)
    endpoints[kind] = f"http://127.0.0.1:{server.server_address[1]}/"
print(endpoints)

# the detector can just as well be a subprocess speaking JSON lines
endpoints["detector"] = f"{sys.executable} -m camoseg.mocklab.serve detector --scenes {tmp / 'ds' / 'scenes.json'}"

cfg = PipelineConfig(cache_dir=str(tmp / "cache"), **endpoints)
clients = build_clients(cfg)
image = load_image(tmp / "ds" / "Image" / "scene_0000.png")
for attempt in ("cold", "warm"):
    mask, trace = run_pipeline(image, cfg, clients, "scene_0000")
    cached = sum(q["cached"] for q in trace.queries)
    print(f"{attempt}: status {trace.status}, {cached}/{len(trace.queries)} replies from cache, "
          f"mask covers {mask.values.mean():.1%}")
print("cache file:", tmp / "cache" / "detector_cache.jsonl")
