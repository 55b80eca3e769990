"""Per-generation seed derivation.

``derive_seed`` hashes the tuple ``(master_seed, image_id, instance_id,
variant_index, attempt)`` with BLAKE2b (8-byte digest, personalization
``b"instarepaint/v1"``) over this byte layout::

    master_seed    u64 little-endian
    image_id       u32 LE byte length + UTF-8 bytes
    instance_id    u32 LE byte length + UTF-8 bytes
    variant_index  u32 LE
    attempt        u32 LE

and reads the digest as a little-endian u64.
"""

import hashlib
import struct

import numpy as np

PERSONALIZATION = b"instarepaint/v1"


def _field(text):
    raw = str(text).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def seed_bytes(master_seed, image_id, instance_id, variant_index, attempt):
    return (
        struct.pack("<Q", int(master_seed) & (2**64 - 1))
        + _field(image_id)
        + _field(instance_id)
        + struct.pack("<II", int(variant_index), int(attempt))
    )


def derive_seed(master_seed, image_id, instance_id, variant_index, attempt=0):
    digest = hashlib.blake2b(
        seed_bytes(master_seed, image_id, instance_id, variant_index, attempt),
        digest_size=8,
        person=PERSONALIZATION,
    ).digest()
    return int.from_bytes(digest, "little")


def prompt_rng(master_seed, image_id, instance_id, variant_index):
    """Generator for prompt sampling of one variant; independent of NSFW retries."""
    return np.random.default_rng([derive_seed(master_seed, image_id, instance_id, variant_index, 0), 1])
