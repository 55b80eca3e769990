"""
Mixing generated instances with real ones
=========================================

Every instance gets a few repainted versions. A training image is then any
combination of "keep the original" or "use variant k" per instance, so a
handful of generations gives a lot of distinct images.
"""

from pathlib import Path
import tempfile

import numpy as np

from instarepaint.assets import AssetStore
from instarepaint.backends.mocks import MockInpainter, MockNsfw
from instarepaint.dataset import ImageRecord, Instance
from instarepaint.manifest import VariantManifest
from instarepaint.raster import write_png
from instarepaint.rendering import assemble_image, count_variations, enumerate_choices, generate_variants

out = Path(tempfile.mkdtemp(prefix="mixing_"))

# a gray street with three boxes standing in for annotated objects
h, w = 64, 96
image = np.full((h, w, 3), 128, np.uint8)
masks = []
for x0 in (6, 38, 70):
    m = np.zeros((h, w), bool)
    m[20:56, x0:x0 + 20] = True
    masks.append(m)
write_png(out / "street.png", image)
record = ImageRecord("street", out / "street.png", w, h,
                     tuple(Instance.from_mask(str(i), m, "car") for i, m in enumerate(masks)))

# %%
# Two variants per instance from the mock inpainter (a flat hashed color)
K = 2
store = AssetStore()
depth = np.tile(np.linspace(0, 1, h)[:, None], (1, w))
entries = generate_variants(record, (depth, np.zeros((h, w))), {"0": "car, red", "1": "car, blue", "2": "car"},
                            MockInpainter(), MockNsfw(), K, store=store)
manifest = VariantManifest("demo", tuple(entries))
print("variants generated:", len(entries))
print("distinct training images:", count_variations(len(record.instances), K))

# %%
# Assemble every choice vector; None means "original"
tiles = []
for choice in enumerate_choices([K] * 3):
    tiles.append(assemble_image(record, manifest, choice, [0, 1, 2], store, image=image))
print("unique assemblies:", len({t.tobytes() for t in tiles}))

rows = [np.concatenate(tiles[i:i + 9], axis=1) for i in range(0, 27, 9)]
write_png(out / "all_mixtures.png", np.concatenate(rows, axis=0))
print("contact sheet:", out / "all_mixtures.png")
