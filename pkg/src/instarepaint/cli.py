"""Repaint annotated object instances to augment or anonymize a dataset.

Exit codes: 0 success, 1 fatal error (bad config, unreadable dataset, ...),
2 finished with per-image or per-instance failures.
"""

import argparse
import logging
import secrets
import shutil
import sys
from pathlib import Path

import numpy as np

from .assets import AssetStore, safe_name
from .backends.base import KINDS
from .backends.mocks import LossyCodec, LossyCodecSpec
from .config import PipelineConfig, build_backends, load_config, read_config_dict
from .dataset import IMAGE_SUFFIXES, load_coco, load_saliency_dataset, load_voc
from .errors import ConfigError, RepaintError
from .manifest import read_manifest, validate_manifest
from .metrics import plot_curve, roundtrip_degradation
from .pipeline import (
    anonymized_image,
    run_anonymization,
    run_augmentation,
    sample_training_view,
)
from .raster import read_rgb, write_png

logger = logging.getLogger("instarepaint")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _endpoint(text):
    kind, sep, url = text.partition("=")
    if not sep or kind not in KINDS or not url:
        raise argparse.ArgumentTypeError(f"expected KIND=URL with KIND in {', '.join(KINDS)}")
    return kind, url


def _add_dataset_args(p, required=True):
    p.add_argument("--dataset-format", choices=("coco", "voc", "saliency"), default="coco")
    p.add_argument("--images", required=required, help="image directory (COCO: image root)")
    p.add_argument("--annotations", required=required,
                   help="COCO JSON file, VOC root with Segmentation{Object,Class}/, or saliency map directory")


def _add_run_args(p):
    p.add_argument("--config", help="pipeline config file (JSON or YAML)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (generated and reported when omitted)")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (image-level)")
    p.add_argument("--backend-endpoint", type=_endpoint, action="append", default=[], metavar="KIND=URL")
    p.add_argument("--mock-backends", action="store_true", help="use the deterministic mock backends")


def build_parser():
    parser = argparse.ArgumentParser(prog="instarepaint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate K variants per instance")
    _add_dataset_args(p)
    _add_run_args(p)
    p.add_argument("--k", type=int, help="variants per instance")
    p.add_argument("--resume", action="store_true", help="continue an interrupted run in --out")

    p = sub.add_parser("anonymize", help="repaint every instance of the target classes")
    _add_dataset_args(p)
    _add_run_args(p)
    p.add_argument("--target-classes", help="comma-separated class names, e.g. person,car")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("sample", help="materialize training views mixing real and generated instances")
    _add_dataset_args(p)
    _add_run_args(p)
    p.add_argument("--manifest", required=True, help="manifest.json of a generate run")
    p.add_argument("--probability", type=float, help="per-instance repaint probability")
    p.add_argument("--count", type=int, default=1, help="views per image")

    p = sub.add_parser("eval-roundtrip", help="PSNR/SSIM after repeated lossy codec round trips")
    p.add_argument("--images", required=True, nargs="+", help="image files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--down-factor", type=int, default=2)
    p.add_argument("--plot", action="store_true", help="also render a PNG plot per image")

    p = sub.add_parser("validate", help="check a manifest against its dataset and assets")
    _add_dataset_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="config file (for the saliency VQA backend)")
    p.add_argument("--mock-backends", action="store_true")
    p.add_argument("--backend-endpoint", type=_endpoint, action="append", default=[], metavar="KIND=URL")
    return parser


def _config(args):
    raw = read_config_dict(args.config) if getattr(args, "config", None) else {}
    try:
        config = PipelineConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config file {args.config}: {exc}") from exc
    explicit_seed = "master_seed" in raw
    if getattr(args, "seed", None) is not None:
        config.master_seed = args.seed
    elif not explicit_seed and hasattr(args, "seed"):
        config.master_seed = secrets.randbits(64)
        print(f"master seed: {config.master_seed}")
    if getattr(args, "k", None) is not None:
        config.K = args.k
    if getattr(args, "probability", None) is not None:
        config.repaint_probability = args.probability
    if getattr(args, "target_classes", None):
        config.target_classes = frozenset(c.strip().lower() for c in args.target_classes.split(",") if c.strip())
    config.__post_init__()
    return config


def _backends(args, config):
    return build_backends(config, mock=args.mock_backends, overrides=dict(args.backend_endpoint))


def _dataset(args, config, backends):
    if args.dataset_format == "coco":
        return load_coco(args.annotations, args.images)
    if args.dataset_format == "voc":
        return load_voc(args.images, args.annotations)
    return load_saliency_dataset(args.images, args.annotations, backends.vqa, config.saliency_threshold,
                                 config.object_question)


def _copy_annotations(args, out):
    dest = Path(out) / "annotations"
    src = Path(args.annotations)
    if src.is_dir():
        shutil.copytree(src, dest / src.name, dirs_exist_ok=True)
    else:
        dest.mkdir(parents=True, exist_ok=True)
        shutil.copy2(src, dest / src.name)


def cmd_generate(args):
    config = _config(args)
    backends = _backends(args, config)
    dataset = _dataset(args, config, backends)
    manifest, report = run_augmentation(dataset, config, backends, args.out, resume=args.resume, jobs=args.jobs)
    print(report.to_text(), end="")
    return EXIT_PARTIAL if report.failed else EXIT_OK


def cmd_anonymize(args):
    config = _config(args)
    if not config.target_classes:
        print("error: no target classes (use --target-classes or target_classes in the config)", file=sys.stderr)
        return EXIT_FATAL
    backends = _backends(args, config)
    dataset = _dataset(args, config, backends)
    manifest, report = run_anonymization(dataset, config, backends, args.out, resume=args.resume, jobs=args.jobs)
    store = AssetStore(args.out)
    failed_images = {f["image_id"] for f in report.backend_failures}
    for record in dataset:
        if record.image_id in failed_images:
            continue
        image = anonymized_image(record, manifest, store, feather_radius=config.feather_radius)
        write_png(Path(args.out) / "images" / f"{Path(record.path).stem}.png", image)
    _copy_annotations(args, args.out)
    print(report.to_text(), end="")
    return EXIT_PARTIAL if report.failed else EXIT_OK


def cmd_sample(args):
    config = _config(args)
    backends = _backends(args, config)
    dataset = _dataset(args, config, backends)
    manifest_path = Path(args.manifest)
    manifest = read_manifest(manifest_path)
    store = AssetStore(manifest_path.parent)
    rng = np.random.default_rng(config.master_seed)
    out = Path(args.out)
    fallbacks = 0
    for record in dataset:
        for m in range(args.count):
            view = sample_training_view(record, manifest, config.repaint_probability, rng, store,
                                        feather_radius=config.feather_radius)
            fallbacks += view.fallbacks
            write_png(out / "samples" / f"{safe_name(record.image_id)}_{m}.png", view.image)
    _copy_annotations(args, out)
    print(f"wrote {len(dataset) * args.count} views to {out / 'samples'} ({fallbacks} fallbacks to original)")
    return EXIT_OK


def _image_paths(items):
    for item in items:
        p = Path(item)
        if p.is_dir():
            yield from sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
        else:
            yield p


def cmd_eval_roundtrip(args):
    codec = LossyCodec(LossyCodecSpec(args.down_factor))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = list(_image_paths(args.images))
    if not paths:
        print("error: no images found", file=sys.stderr)
        return EXIT_FATAL
    for path in paths:
        curve = roundtrip_degradation(read_rgb(path), codec, args.steps)
        csv_path = out / f"{path.stem}_roundtrip.csv"
        csv_path.write_text(curve.to_csv())
        if args.plot:
            plot_curve(curve, out / f"{path.stem}_roundtrip.png")
        print(f"{path.name}: {csv_path}")
    return EXIT_OK


def cmd_validate(args):
    config = load_config(args.config) if args.config else PipelineConfig()
    backends = _backends(args, config) if args.dataset_format == "saliency" else None
    dataset = _dataset(args, config, backends)
    manifest_path = Path(args.manifest)
    report = validate_manifest(read_manifest(manifest_path), dataset, root=manifest_path.parent)
    for line in report.lines():
        print(line)
    if report.ok:
        print("manifest is consistent")
        return EXIT_OK
    return EXIT_PARTIAL


COMMANDS = {
    "generate": cmd_generate,
    "anonymize": cmd_anonymize,
    "sample": cmd_sample,
    "eval-roundtrip": cmd_eval_roundtrip,
    "validate": cmd_validate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (RepaintError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
