"""Expose a mock service over the real wire protocols.

    python -m camoseg.mocklab.serve detector --scenes DATA/scenes.json            # stdio
    python -m camoseg.mocklab.serve segmenter --scenes DATA/scenes.json --port 8081

Useful for exercising the HTTP and subprocess adapters end to end.
"""

from __future__ import annotations

import argparse
import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..completion import feature_map_to_wire
from ..segmenter import candidates_to_wire, parse_segment_request
from ..services import decode_image
from .services import MockDetector, MockExtractor, MockSegmenter, MockWorld


def handle(kind: str, service, request: dict) -> dict:
    image = decode_image(request["image"])
    if kind == "detector":
        return {"text": service.query(image, request["prompt"])}
    if kind == "extractor":
        return feature_map_to_wire(service.extract(image))
    if kind == "segmenter":
        points, box = parse_segment_request(request)
        return candidates_to_wire(service.segment(image, points, box))
    raise ValueError(f"unknown service kind {kind!r}")


def build_service(kind: str, world: MockWorld, box_noise=0.0, miss_prob=0.0, seed=0, threshold=0.7):
    if kind == "detector":
        return MockDetector(world, box_noise, miss_prob, seed)
    if kind == "extractor":
        return MockExtractor(world)
    if kind == "segmenter":
        return MockSegmenter(world, threshold)
    raise ValueError(f"unknown service kind {kind!r}")


def make_http_server(kind: str, service, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                reply = handle(kind, service, json.loads(self.rfile.read(length)))
                body, status = json.dumps(reply).encode(), 200
            except Exception as exc:
                body, status = json.dumps({"error": str(exc)}).encode(), 400
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    return ThreadingHTTPServer((host, port), Handler)


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    return t


def serve_stdio(kind: str, service, stdin=sys.stdin, stdout=sys.stdout) -> None:
    for line in stdin:
        if not line.strip():
            continue
        try:
            reply = handle(kind, service, json.loads(line))
        except Exception as exc:
            reply = {"error": f"{type(exc).__name__}: {exc}"}
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("kind", choices=["detector", "extractor", "segmenter"])
    ap.add_argument("--scenes", help="scenes.json written by `camoseg synth`")
    ap.add_argument("--port", type=int, help="serve HTTP on this port instead of stdio")
    ap.add_argument("--box-noise", type=float, default=0.0)
    ap.add_argument("--miss-prob", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threshold", type=float, default=0.7)
    args = ap.parse_args(argv)
    world = MockWorld.from_file(args.scenes) if args.scenes else MockWorld()
    service = build_service(args.kind, world, args.box_noise, args.miss_prob, args.seed, args.threshold)
    if args.port is None:
        serve_stdio(args.kind, service)
    else:
        make_http_server(args.kind, service, port=args.port).serve_forever()


if __name__ == "__main__":
    main()
