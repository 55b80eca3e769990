import json

import numpy as np
import pytest
from skimage import data

from instarepaint.cli import main
from instarepaint.raster import read_rgb, write_png

from .conftest import write_coco


def _box(x0, y0, x1, y1):
    return [x0, y0, x1, y0, x1, y1, x0, y1]


@pytest.fixture
def coco(tmp_path):
    g = np.random.default_rng(3)
    root = tmp_path / "data"
    root.mkdir()
    images, anns = [], []
    for i in range(2):
        write_png(root / f"im{i}.png", g.integers(0, 256, (40, 50, 3), dtype=np.uint8))
        images.append({"id": i, "file_name": f"im{i}.png", "width": 50, "height": 40})
        anns.append({"id": 10 * i + 1, "image_id": i, "category_id": 1, "segmentation": [_box(2, 2, 20, 30)]})
        anns.append({"id": 10 * i + 2, "image_id": i, "category_id": 2, "segmentation": [_box(25, 5, 45, 35)]})
    ann = write_coco(tmp_path / "ann.json", images, anns, [{"id": 1, "name": "person"}, {"id": 2, "name": "dog"}])
    return root, ann


def _run(coco, command, out, *extra):
    root, ann = coco
    return main([command, "--images", str(root), "--annotations", str(ann), "--out", str(out),
                 "--mock-backends", "--seed", "5", *extra])


def test_generate(coco, tmp_path):
    assert _run(coco, "generate", tmp_path / "o1", "--k", "2") == 0
    manifest = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert len(manifest["entries"]) == 2 * 2 * 2
    assert _run(coco, "generate", tmp_path / "o1", "--k", "2") == 0
    again = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert again == manifest
    root, ann = coco
    assert main(["validate", "--images", str(root), "--annotations", str(ann),
                 "--manifest", str(tmp_path / "o1" / "manifest.json")]) == 0


def test_generate_bad_config(coco, tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert _run(coco, "generate", tmp_path / "o", "--config", str(missing)) == 1
    assert "nope.yaml" in capsys.readouterr().err


def test_generate_poisoned(coco, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mock": {"inpaint": {"fail_image_ids": ["1"]}}}))
    assert _run(coco, "generate", tmp_path / "o", "--config", str(cfg)) == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert [f["image_id"] for f in report["backend_failures"]] == ["1"]


def test_sample_p0_is_identity(coco, tmp_path):
    root, _ = coco
    assert _run(coco, "generate", tmp_path / "gen") == 0
    assert _run(coco, "sample", tmp_path / "s", "--manifest", str(tmp_path / "gen" / "manifest.json"),
                "--probability", "0", "--count", "2") == 0
    for i in range(2):
        for m in range(2):
            assert np.array_equal(read_rgb(tmp_path / "s" / "samples" / f"{i}_{m}.png"), read_rgb(root / f"im{i}.png"))
    assert (tmp_path / "s" / "annotations" / "ann.json").exists()


def test_anonymize(coco, tmp_path):
    root, _ = coco
    assert _run(coco, "anonymize", tmp_path / "a", "--target-classes", "person") == 0
    out = read_rgb(tmp_path / "a" / "images" / "im0.png")
    orig = read_rgb(root / "im0.png")
    assert np.any(out[2:31, 2:21] != orig[2:31, 2:21])
    assert np.array_equal(out[:, 46:], orig[:, 46:])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mock": {"nsfw": {"always_fail": True}}, "max_attempts": 2}))
    assert _run(coco, "anonymize", tmp_path / "b", "--target-classes", "person", "--config", str(cfg)) != 0


def test_eval_roundtrip(tmp_path):
    write_png(tmp_path / "cat.png", data.chelsea()[:64, :64])
    assert main(["eval-roundtrip", "--images", str(tmp_path / "cat.png"), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "cat_roundtrip.csv").read_text().splitlines()
    assert lines[0] == "step,psnr_db,ssim" and len(lines) == 11


def test_bad_endpoint_flag(coco, tmp_path):
    with pytest.raises(SystemExit):
        _run(coco, "generate", tmp_path / "o", "--backend-endpoint", "teleport=http://x")
