"""Instance-level dataset enhancement by generative repainting.

Annotated objects are repainted one at a time by an inpainting backend,
always starting from the original image, and recombined back to front so
that any mix of original and generated instances can be assembled while
the annotations stay valid.
"""

from .dataset import Dataset, ImageRecord, Instance, bounding_rect, load_coco, load_saliency_dataset, load_voc
from .manifest import VariantEntry, VariantManifest, read_manifest, validate_manifest, write_manifest
from .metrics import DegradationCurve, psnr, roundtrip_degradation, ssim
from .pipeline import RunReport, run_anonymization, run_augmentation, sample_training_view
from .config import PipelineConfig
from .prompting import AppearanceConfig, PromptSpec, build_prompt, expand_class_description, sample_appearance
from .rendering import (
    ORIGINAL,
    assemble_image,
    composite,
    count_variations,
    generate_variants,
    iterative_redraw,
    prepare_small_object,
    refine_mask,
)
from .scene import analyze_scene, draw_order, instance_depth
from .seeding import derive_seed

__version__ = "0.1.0"
