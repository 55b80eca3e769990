import json
import random

import numpy as np
import pytest

from instarepaint.assets import AssetStore
from instarepaint.backends.mocks import MockInpainter, MockNsfw, MockVqa, mock_backend_set
from instarepaint.config import PipelineConfig
from instarepaint.dataset import Dataset
from instarepaint.errors import ResumeError
from instarepaint.manifest import KEPT_ORIGINAL, SMALL_OBJECT, read_manifest, validate_manifest
from instarepaint.pipeline import (
    JOURNAL_NAME,
    MANIFEST_NAME,
    anonymized_image,
    run_anonymization,
    run_augmentation,
    sample_training_view,
)
from instarepaint.rendering import ORIGINAL
from instarepaint.seeding import derive_seed, prompt_rng

from .conftest import box_mask, make_record


def _config(**kw):
    return PipelineConfig(master_seed=11, **kw)


def test_augmentation_counts_and_determinism(small_dataset, tmp_path):
    backends = mock_backend_set()
    m1, r1 = run_augmentation(small_dataset, _config(), backends, tmp_path / "a")
    m2, _ = run_augmentation(small_dataset, _config(), mock_backend_set(), tmp_path / "b")
    assert len(m1.entries) == 2 * 2 * 3 and r1.exit_status == 0
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()
    assert not (tmp_path / "a" / JOURNAL_NAME).exists()
    assert validate_manifest(read_manifest(tmp_path / "a" / MANIFEST_NAME), small_dataset, tmp_path / "a").ok
    for e in m1.entries:
        assert (tmp_path / "a" / e.asset_path).read_bytes() == (tmp_path / "b" / e.asset_path).read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["entries_written"] == 12 and report["master_seed"] == 11


def test_parallel_matches_serial(small_dataset, tmp_path):
    run_augmentation(small_dataset, _config(), mock_backend_set(), tmp_path / "s")
    run_augmentation(small_dataset, _config(), mock_backend_set(), tmp_path / "p", jobs=4)
    assert (tmp_path / "s" / MANIFEST_NAME).read_bytes() == (tmp_path / "p" / MANIFEST_NAME).read_bytes()


def test_empty_dataset(tmp_path):
    m, r = run_augmentation(Dataset("empty", ()), _config(), mock_backend_set(), tmp_path)
    assert m.entries == () and r.exit_status == 0


class Crash(BaseException):
    pass


class CrashingInpainter(MockInpainter):
    def __init__(self, after):
        super().__init__()
        self.after = after
        self.calls = 0

    def inpaint(self, request):
        self.calls += 1
        if self.calls > self.after:
            raise Crash()
        return super().inpaint(request)


def test_resume_after_crash(small_dataset, tmp_path):
    full, _ = run_augmentation(small_dataset, _config(), mock_backend_set(), tmp_path / "full")
    backends = mock_backend_set()
    backends.inpaint = CrashingInpainter(after=7)
    with pytest.raises(Crash):
        run_augmentation(small_dataset, _config(), backends, tmp_path / "crash")
    assert (tmp_path / "crash" / JOURNAL_NAME).exists()
    assert not (tmp_path / "crash" / MANIFEST_NAME).exists()
    resumed, report = run_augmentation(small_dataset, _config(), mock_backend_set(), tmp_path / "crash", resume=True)
    assert report.resumed_entries == 6
    assert resumed == full
    assert (tmp_path / "crash" / MANIFEST_NAME).read_bytes() == (tmp_path / "full" / MANIFEST_NAME).read_bytes()


def test_resume_config_mismatch(small_dataset, tmp_path):
    backends = mock_backend_set()
    backends.inpaint = CrashingInpainter(after=2)
    with pytest.raises(Crash):
        run_augmentation(small_dataset, _config(), backends, tmp_path)
    with pytest.raises(ResumeError):
        run_augmentation(small_dataset, _config(K=2), mock_backend_set(), tmp_path, resume=True)


def test_poisoned_image_is_isolated(small_dataset, tmp_path):
    m, r = run_augmentation(small_dataset, _config(), mock_backend_set(fail_image_ids=["img1"]), tmp_path)
    assert {e.image_id for e in m.entries} == {"img0"} and len(m.entries) == 6
    assert [f["image_id"] for f in r.backend_failures] == ["img1"]
    assert r.exit_status == 2
    assert "img1" in (tmp_path / "report.txt").read_text()


def test_nsfw_exhaustion_in_augmentation(small_dataset):
    m, r = run_augmentation(small_dataset, _config(K=1, max_attempts=3), mock_backend_set(nsfw=MockNsfw(always_fail=True)))
    assert all(KEPT_ORIGINAL in e.flags and e.nsfw_attempts == 3 for e in m.entries)
    assert r.kept_original == 4 and r.exit_status == 0
    assert m.variants("img0", "a") == []


def test_prompts_use_person_action(small_dataset):
    vqa = MockVqa(answers={"what is the person doing?": "surfing"})
    m, _ = run_augmentation(small_dataset, _config(K=1), mock_backend_set(vqa=vqa))
    person = [e for e in m.entries if e.instance_id == "a"]
    assert all(e.prompt_text.startswith("person surfing") for e in person)
    cups = [e for e in m.entries if e.instance_id == "b"]
    assert all(e.prompt_text.startswith("cup") for e in cups)


def _anon_fixture(tmp_path):
    img = np.random.default_rng(5).integers(0, 256, (120, 160, 3), dtype=np.uint8)
    masks = [box_mask(120, 160, 5, 5, 40, 60), box_mask(120, 160, 50, 10, 80, 70),
             box_mask(120, 160, 100, 80, 119, 99),  # 20x20 person -> small path
             box_mask(120, 160, 120, 5, 150, 40), box_mask(120, 160, 90, 5, 110, 30)]
    labels = ["person", "person", "person", "dog", "dog"]
    rec = make_record(tmp_path, "street", img, masks, labels, ["p0", "p1", "p2", "d0", "d1"])
    return Dataset("anon", (rec,)), img, masks


def test_anonymization(tmp_path):
    ds, img, masks = _anon_fixture(tmp_path)
    out = tmp_path / "out"
    m, r = run_anonymization(ds, _config(target_classes={"person"}), mock_backend_set(), out)
    assert [e.instance_id for e in m.entries] == ["p0", "p1", "p2"]
    assert [SMALL_OBJECT in e.flags for e in m.entries] == [False, False, True]
    assert r.exit_status == 0
    anon = anonymized_image(ds.records[0], m, AssetStore(out), image=img)
    target = np.any(masks[:3], axis=0)
    assert np.array_equal(anon[~target], img[~target])
    for mask in masks[:3]:
        assert np.any(anon[mask] != img[mask])


def test_anonymization_absent_class_and_failure(tmp_path):
    ds, _, _ = _anon_fixture(tmp_path)
    m, r = run_anonymization(ds, _config(target_classes={"bicycle"}), mock_backend_set())
    assert m.entries == () and r.exit_status == 0
    m, r = run_anonymization(ds, _config(target_classes={"person"}, max_attempts=2),
                             mock_backend_set(nsfw=MockNsfw(always_fail=True)))
    assert len(r.anonymization_failures) == 3 and r.exit_status != 0
    with pytest.raises(ValueError):
        run_anonymization(ds, _config(), mock_backend_set())


@pytest.fixture
def generated(small_dataset, tmp_path):
    m, _ = run_augmentation(small_dataset, _config(), mock_backend_set(), tmp_path)
    return small_dataset, m, AssetStore(tmp_path)


def test_sampler_endpoints(generated):
    ds, m, store = generated
    rng = np.random.default_rng(0)
    for rec in ds:
        view = sample_training_view(rec, m, 0.0, rng, store)
        assert np.array_equal(view.image, rec.load_image())
        assert view.choice == (ORIGINAL, ORIGINAL)
        full = sample_training_view(rec, m, 1.0, rng, store)
        assert ORIGINAL not in full.choice
        assert full.instances is rec.instances


def test_sampler_rate(generated):
    ds, m, store = generated
    rng = np.random.default_rng(99)
    rec = ds.records[0]
    img = rec.load_image()
    picks = []
    for _ in range(2500):
        view = sample_training_view(rec, m, 0.3, rng, store, order=[0, 1], image=img)
        picks += [c is not ORIGINAL for c in view.choice]
    assert 0.285 <= np.mean(picks) <= 0.315


def test_derive_seed_layout():
    a = derive_seed(1, "ab", "c", 0)
    assert a == derive_seed(1, "ab", "c", 0, 0)
    assert a != derive_seed(1, "a", "bc", 0)
    assert a != derive_seed(2, "ab", "c", 0)
    assert 0 <= a < 2**64
    r1, r2 = prompt_rng(1, "ab", "c", 0), prompt_rng(1, "ab", "c", 0)
    assert r1.random() == r2.random()


def test_derive_seed_no_collisions():
    gen = random.Random(0)
    tuples = {(gen.getrandbits(64), f"img{gen.randrange(5000)}", str(gen.randrange(50)), gen.randrange(5), gen.randrange(5))
              for _ in range(1_000_000)}
    seeds = {derive_seed(*t) for t in tuples}
    assert len(seeds) == len(tuples) > 990_000
