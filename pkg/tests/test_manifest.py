import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from instarepaint.dataset import Dataset
from instarepaint.errors import ManifestFormatError
from instarepaint.manifest import (
    KEPT_ORIGINAL,
    VariantEntry,
    VariantManifest,
    read_manifest,
    validate_manifest,
    write_manifest,
)
from instarepaint.raster import write_png

entry_st = st.builds(
    VariantEntry,
    image_id=st.text(min_size=1, max_size=8),
    instance_id=st.text(min_size=1, max_size=8),
    variant_index=st.integers(0, 5),
    asset_path=st.one_of(st.none(), st.text(max_size=20)),
    prompt_text=st.text(max_size=30),
    seed=st.integers(0, 2**64 - 1),
    refined_mask_path=st.one_of(st.none(), st.text(max_size=20)),
    nsfw_attempts=st.integers(1, 9),
    flags=st.frozensets(st.sampled_from(["kept_original", "refined", "small_object"])),
)


@given(st.lists(entry_st, max_size=6))
def test_roundtrip_lossless(entries):
    import tempfile
    from pathlib import Path

    m = VariantManifest("ds", tuple(entries), {"K": 3, "depth_mode": "sum"})
    with tempfile.TemporaryDirectory() as d:
        path = write_manifest(m, Path(d) / "m.json")
        assert read_manifest(path) == m


def test_empty_manifest(tmp_path):
    path = write_manifest(VariantManifest("ds"), tmp_path / "m.json")
    assert json.loads(path.read_text())["schema"] == 1
    assert read_manifest(path).entries == ()


def test_schema_mismatch(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"schema": 2, "dataset_id": "x", "entries": [], "generation_config": {}}))
    with pytest.raises(ManifestFormatError, match="schema"):
        read_manifest(p)


def _entry(img, inst, k, asset=None, flags=()):
    return VariantEntry(img, inst, k, asset, "cup", 1, None, 1, frozenset(flags))


def test_validate_reports_exactly_the_bad_entries(small_dataset, tmp_path):
    write_png(tmp_path / "ok.png", np.zeros((2, 2, 3), np.uint8))
    good = _entry("img0", "a", 0, "ok.png")
    dangling = _entry("nope", "a", 0, "ok.png")
    missing = _entry("img0", "b", 0, "gone.png")
    kept = _entry("img1", "a", 0, None, [KEPT_ORIGINAL])
    gap = [_entry("img1", "b", 0, "ok.png"), _entry("img1", "b", 2, "ok.png")]
    m = VariantManifest("tiny", (good, dangling, missing, kept, *gap))
    report = validate_manifest(m, small_dataset, root=tmp_path)
    assert report.dangling == [dangling]
    assert report.missing_assets == [missing]
    assert report.non_contiguous == [("img1", "b", [0, 2])]
    assert not report.ok and len(report.lines()) == 3


def test_validate_consistent(small_dataset, tmp_path):
    write_png(tmp_path / "ok.png", np.zeros((2, 2, 3), np.uint8))
    m = VariantManifest("tiny", tuple(_entry("img0", "a", k, "ok.png") for k in range(3)))
    assert validate_manifest(m, small_dataset, root=tmp_path).ok
    assert validate_manifest(VariantManifest("tiny"), Dataset("e", ())).ok


@given(st.lists(st.tuples(st.sampled_from(["img0", "img1", "zz"]), st.sampled_from(["a", "b", "q"])), max_size=8))
def test_dangling_matches_scan(pairs):
    # oracle: plain set-membership scan over the dataset
    from instarepaint.dataset import Dataset, ImageRecord, Instance

    mask = np.ones((2, 2), bool)
    recs = tuple(ImageRecord(i, "x.png", 2, 2, (Instance.from_mask("a", mask, "c"), Instance.from_mask("b", mask, "c")))
                 for i in ("img0", "img1"))
    entries = tuple(_entry(img, inst, 0) for img, inst in pairs)
    report = validate_manifest(VariantManifest("d", entries), Dataset("d", recs))
    expected = [e for e in entries if e.image_id == "zz" or e.instance_id == "q"]
    assert report.dangling == expected
