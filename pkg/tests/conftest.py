import json

import numpy as np
import pytest

from instarepaint.dataset import Dataset, ImageRecord, Instance
from instarepaint.raster import write_png


def make_record(directory, image_id, image, masks, labels=None, ids=None):
    """Write ``image`` to disk and build a record with one instance per mask."""
    path = directory / f"{image_id}.png"
    write_png(path, image)
    h, w = image.shape[:2]
    labels = labels or ["object"] * len(masks)
    ids = ids or [str(i) for i in range(len(masks))]
    instances = tuple(Instance.from_mask(i, m, c) for i, m, c in zip(ids, masks, labels))
    return ImageRecord(image_id, path, w, h, instances)


def box_mask(h, w, x0, y0, x1, y1):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y1 + 1, x0:x1 + 1] = True
    return m


def write_coco(path, images, annotations, categories):
    path.write_text(json.dumps({"images": images, "annotations": annotations, "categories": categories}))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dataset(tmp_path):
    """Two 48x64 images with two boxes each (person + cup)."""
    g = np.random.default_rng(7)
    records = []
    for n in range(2):
        img = g.integers(0, 256, (48, 64, 3), dtype=np.uint8)
        masks = [box_mask(48, 64, 5, 5, 30, 40), box_mask(48, 64, 25, 10, 60, 30)]
        records.append(make_record(tmp_path, f"img{n}", img, masks, ["person", "cup"], ["a", "b"]))
    return Dataset("tiny", tuple(records))


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Run one acceptance check, remember its verdict for the summary and assert on it."""

    def check(number, title, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed criterion, still reported
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ACCEPTANCE[number] = (title, bool(ok), detail)
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
