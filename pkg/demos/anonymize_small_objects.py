"""
Anonymizing people, including tiny ones
=======================================

Anonymization repaints every instance of the target classes. Objects below
32x32 px are too small for a generator working at 512 px, so they are cut
out with some context, upsampled, repainted and pasted back.
"""

from pathlib import Path
import tempfile

import numpy as np

from instarepaint.backends.mocks import mock_backend_set
from instarepaint.config import PipelineConfig
from instarepaint.dataset import Dataset, ImageRecord, Instance
from instarepaint.pipeline import anonymized_image, run_anonymization
from instarepaint.raster import write_png

out = Path(tempfile.mkdtemp(prefix="anon_"))
rng = np.random.default_rng(0)
image = rng.integers(60, 200, (240, 320, 3), dtype=np.uint8)
write_png(out / "plaza.png", image)


def box(x0, y0, x1, y1):
    m = np.zeros(image.shape[:2], bool)
    m[y0:y1, x0:x1] = True
    return m


instances = (
    Instance.from_mask("near", box(20, 60, 80, 220), "person"),
    Instance.from_mask("far", box(200, 100, 212, 124), "person"),  # 12x24 px
    Instance.from_mask("dog", box(120, 160, 180, 210), "dog"),
)
dataset = Dataset("plaza", (ImageRecord("plaza", out / "plaza.png", 320, 240, instances),))

config = PipelineConfig(target_classes={"person"}, master_seed=1)
manifest, report = run_anonymization(dataset, config, mock_backend_set(), out / "run")
for e in manifest.entries:
    print(e.instance_id, sorted(e.flags), "attempts:", e.nsfw_attempts)
print(report.to_text())

result = anonymized_image(dataset.records[0], manifest, out / "run", image=image)
write_png(out / "plaza_anonymized.png", result)
print("dog untouched:", np.array_equal(result[instances[2].mask], image[instances[2].mask]))
print("written to", out)
