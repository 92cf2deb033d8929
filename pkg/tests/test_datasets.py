import numpy as np
import pytest
from PIL import Image

from camoseg.datasets import DatasetError, DatasetManifest, load_manifest, validate_manifest


def write_pair(img_dir, gt_dir, stem, size=(12, 10), gt_size=None, ext=".jpg"):
    img_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.full((size[1], size[0], 3), 90, np.uint8)).save(img_dir / f"{stem}{ext}")
    g = np.zeros((size[1], size[0]) if gt_size is None else gt_size[::-1], np.uint8)
    g[2:5, 3:7] = 255
    Image.fromarray(g).save(gt_dir / f"{stem}.png")


@pytest.fixture
def camo(tmp_path):
    root = tmp_path / "CAMO"
    for stem in ("b", "a", "c"):
        write_pair(root / "Imgs", root / "GT", stem)
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(root / "Imgs" / "orphan.jpg")
    return root


def test_orphan_is_warned(camo):
    m = load_manifest(camo, "camo")
    assert [p.image_id for p in m.pairs] == ["a", "b", "c"]
    assert len(m.warnings) == 1 and "orphan" in m.warnings[0]
    assert m.dataset_id == "camo"


def test_clean_fixture_validates(camo):
    rep = validate_manifest(load_manifest(camo, "camo"))
    assert rep.ok and rep.n_checked == 3


def test_truncated_png_flagged(camo):
    gt = camo / "GT" / "b.png"
    gt.write_bytes(gt.read_bytes()[:30])
    rep = validate_manifest(load_manifest(camo, "camo"))
    assert set(rep.failures) == {"b"} and rep.n_checked == 3


def test_size_mismatch_flagged(tmp_path):
    write_pair(tmp_path / "Image", tmp_path / "GT", "x", gt_size=(5, 5))
    write_pair(tmp_path / "Image", tmp_path / "GT", "y")
    rep = validate_manifest(load_manifest(tmp_path))
    assert list(rep.failures) == ["x"] and "size mismatch" in rep.failures["x"]


def test_moca_sequences(tmp_path):
    root = tmp_path / "MoCA-Mask"
    for seq in ("crab", "arctic_fox"):
        for f in range(3):
            write_pair(root / seq / "Imgs", root / seq / "GT", f"{f:05d}")
    m = load_manifest(root, "moca")
    assert len(m) == 6
    assert m.pairs[0].image_id == "arctic_fox/00000"
    assert {p.sequence_id for p in m.pairs} == {"crab", "arctic_fox"}


def test_test_subfolder_and_case(tmp_path):
    write_pair(tmp_path / "TestDataset" / "images", tmp_path / "TestDataset" / "GT_Object", "k", ext=".PNG")
    assert len(load_manifest(tmp_path, "cod10k")) == 1


def test_expected_count_mismatch(camo):
    with pytest.raises(DatasetError):
        load_manifest(camo, "camo", expected_count=250)


def test_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_manifest(tmp_path / "missing")
    with pytest.raises(ValueError):
        load_manifest(tmp_path, "imagenet")
    (tmp_path / "Imgs").mkdir()
    (tmp_path / "GT").mkdir()
    with pytest.raises(DatasetError):
        load_manifest(tmp_path)


def test_manifest_json_round_trip(camo):
    m = load_manifest(camo, "camo")
    again = DatasetManifest.from_json(m.to_json())
    assert again.pairs == m.pairs and again.dataset_id == m.dataset_id


def test_byte_order(tmp_path):
    for stem in ("Zeta", "alpha", "Beta", "_x"):
        write_pair(tmp_path / "Imgs", tmp_path / "GT", stem)
    ids = [p.image_id for p in load_manifest(tmp_path).pairs]
    assert ids == sorted(ids, key=lambda s: s.encode())
