import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from camoseg.detector import (
    Detection, DetectorClient, NoDetection, RemoteDetector, ResponseCache, aggregate_detections,
    format_box, parse_boxes, query_detector,
)
from camoseg.geometry import BoundingBox
from camoseg.services import RetriableServiceError

IMG = np.zeros((8, 8, 3), np.uint8)


class Echo:
    def __init__(self, text="[0.1,0.2,0.3,0.4]", fail_first=0):
        self.text = text
        self.calls = 0
        self.fail_first = fail_first

    def describe(self):
        return {"service_id": "echo", "kind": "detector", "max_concurrency": 8}

    def query(self, image, prompt):
        self.calls += 1
        if self.calls <= self.fail_first:
            raise RetriableServiceError("flaky")
        return self.text


def det(*box, i=0):
    return Detection(BoundingBox(*box), i, "clean")


def test_query_and_cache():
    svc = Echo()
    client = DetectorClient(svc, backoff=0)
    a = query_detector(client, IMG, "p")
    b = query_detector(client, IMG, "p")
    assert a.raw_text == "[0.1,0.2,0.3,0.4]" and not a.cached
    assert b.cached and b.raw_text == a.raw_text
    assert svc.calls == client.calls == 1


def test_cache_persists_and_skips_corrupt_lines(tmp_path):
    client = DetectorClient(Echo(), ResponseCache(tmp_path), backoff=0)
    client.query(IMG, "p")
    path = tmp_path / "detector_cache.jsonl"
    with path.open("a") as fh:
        fh.write("{not json\n")
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"image_sha256", "prompt_sha256", "service_id", "raw_text", "timestamp"}
    svc = Echo("different")
    again = DetectorClient(svc, ResponseCache(tmp_path), backoff=0).query(IMG, "p")
    assert again.cached and again.raw_text == "[0.1,0.2,0.3,0.4]" and svc.calls == 0


def test_cache_is_keyed_by_service():
    cache = ResponseCache(None)
    DetectorClient(Echo("a"), cache).query(IMG, "p")

    class Other(Echo):
        def describe(self):
            return {"service_id": "other"}

    assert DetectorClient(Other("b"), cache).query(IMG, "p").raw_text == "b"


def test_retries_then_success():
    svc = Echo(fail_first=2)
    assert DetectorClient(svc, retries=2, backoff=0).query(IMG, "p").raw_text
    with pytest.raises(RetriableServiceError):
        DetectorClient(Echo(fail_first=5), retries=2, backoff=0).query(IMG, "q")


def test_unreachable_endpoint_is_retriable():
    client = DetectorClient(RemoteDetector("http://127.0.0.1:9/detect", timeout=0.5), retries=1, backoff=0)
    with pytest.raises(RetriableServiceError):
        client.query(IMG, "p")


def test_concurrent_queries_call_once():
    svc = Echo()
    client = DetectorClient(svc, backoff=0)
    threads = [threading.Thread(target=client.query, args=(IMG, "p")) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert svc.calls == 1


def test_parse_examples():
    (d,) = parse_boxes("The object is at [0.232,0.447,0.573,0.819].")
    assert d.box.as_tuple() == (0.232, 0.447, 0.573, 0.819) and d.parse_confidence == "clean"
    (d,) = parse_boxes("boxes: [0.7,0.1,0.2,0.5]")
    assert d.box.as_tuple() == (0.2, 0.1, 0.7, 0.5) and d.parse_confidence == "recovered"
    with pytest.raises(NoDetection):
        parse_boxes("I cannot find any camouflaged object.")
    (d,) = parse_boxes("[-0.1, 0.2, 1.3, 0.9]")
    assert d.box.as_tuple() == (0.0, 0.2, 1.0, 0.9)
    with pytest.raises(NoDetection):
        parse_boxes("[0.5,0.1,0.5,0.9]")
    assert len(parse_boxes("[0.1,0.1,0.2,0.2] and [0.3,0.3,0.4,0.4]", 4)) == 2


def test_round_trip_grid():
    vals = [round(i * 0.05, 2) for i in range(21)]
    for x1 in vals:
        for x2 in vals:
            if x1 >= x2:
                continue
            b = BoundingBox(x1, 0.1, x2, 0.35)
            (d,) = parse_boxes(format_box(b))
            assert d.box == b


@settings(max_examples=500)
@given(st.text())
def test_fuzz_never_invalid(text):
    try:
        out = parse_boxes(text)
    except NoDetection:
        return
    for d in out:
        b = d.box
        assert 0 <= b.x1 < b.x2 <= 1 and 0 <= b.y1 < b.y2 <= 1


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4))
def test_fuzz_numeric_boxes(vals):
    try:
        (d,) = parse_boxes("[" + ",".join(repr(v) for v in vals) + "]")
    except NoDetection:
        return
    b = d.box
    assert 0 <= b.x1 < b.x2 <= 1 and 0 <= b.y1 < b.y2 <= 1


THREE = [[det(0.1, 0.1, 0.5, 0.5)], [det(0.2, 0.2, 0.6, 0.6)], [det(0.3, 0.3, 0.7, 0.7)]]


def test_aggregate_examples():
    box, p = aggregate_detections([[det(0.2, 0.2, 0.6, 0.6)]])
    assert box.as_tuple() == (0.2, 0.2, 0.6, 0.6) and (p.x, p.y) == pytest.approx((0.4, 0.4))
    assert aggregate_detections(THREE, "median_box")[0].as_tuple() == (0.2, 0.2, 0.6, 0.6)
    assert aggregate_detections(THREE, "union_box")[0].as_tuple() == (0.1, 0.1, 0.7, 0.7)
    assert aggregate_detections([[]] + THREE, "first_success")[0].as_tuple() == (0.1, 0.1, 0.5, 0.5)
    with pytest.raises(NoDetection):
        aggregate_detections([[], []])
    with pytest.raises(ValueError):
        aggregate_detections(THREE, "vote")


@given(st.permutations(range(5)), st.integers(0, 2**32 - 1))
def test_median_permutation_invariant(perm, seed):
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(5):
        x1, y1 = rng.uniform(0, 0.5, 2)
        boxes.append([det(x1, y1, x1 + rng.uniform(0.01, 0.5), y1 + rng.uniform(0.01, 0.5))])
    a = aggregate_detections(boxes, "median_box")
    b = aggregate_detections([boxes[i] for i in perm], "median_box")
    assert a == b
