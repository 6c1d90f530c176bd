"""Command-line extractor producing LSE files + a registry sidecar.

    lse-extract extract-images --dataset DIR --out FILE [--model toy:64]
                [--template "a photo of a {}."] [--task-id 0]
                [--class-id-base 0] [--registry FILE] [--on-error skip|fail]
    lse-extract extract-text   --out FILE (--dataset DIR | --classes a,b,c)
                [same flags]

The dataset directory holds one subdirectory per class.  Extraction is
offline and one-shot; the continual-learning engine only ever reads the
emitted files.
"""

import argparse
import json
import sys

import numpy as np

from .encoders import EncoderError, load_encoder
from .lse_io import LseFormatError, write_lse
from .manifest import ExtractionManifest, ManifestError, image_paths, manifest_from_directory


def _build_manifest(args):
    if args.classes:
        names = [n.strip() for n in args.classes.split(",")]
        return ExtractionManifest(
            dataset=args.dataset or "<inline>",
            split=args.split,
            task_id=args.task_id,
            class_names=names,
            template=args.template,
            class_id_base=args.class_id_base,
        )
    if not args.dataset:
        raise ManifestError("need --dataset or --classes")
    return manifest_from_directory(
        args.dataset,
        split=args.split,
        task_id=args.task_id,
        template=args.template,
        class_id_base=args.class_id_base,
    )


def _write_registry(manifest, path):
    if path:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest.registry_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def cmd_extract_images(args):
    manifest = _build_manifest(args)
    encoder = load_encoder(args.model)
    pairs = image_paths(manifest)
    kept, vectors = [], []
    for cid, path in pairs:
        try:
            vec = encoder.encode_images([path])[0]
        except Exception as exc:
            if args.on_error == "fail":
                raise ManifestError(f"unreadable image {path}: {exc}") from exc
            print(f"skipping unreadable image {path}: {exc}", file=sys.stderr)
            continue
        kept.append(cid)
        vectors.append(vec)
    if not vectors:
        raise ManifestError("no images could be read")
    write_lse(
        args.out,
        [manifest.task_id] * len(kept),
        kept,
        np.stack(vectors),
    )
    _write_registry(manifest, args.registry)
    print(f"wrote {len(kept)} image records (d={encoder.dim}) to {args.out}")
    return 0


def cmd_extract_text(args):
    manifest = _build_manifest(args)
    encoder = load_encoder(args.model)
    vectors = encoder.encode_texts(manifest.sentences())
    write_lse(
        args.out,
        [manifest.task_id] * len(manifest.class_names),
        manifest.class_ids(),
        vectors,
    )
    _write_registry(manifest, args.registry)
    print(f"wrote {len(manifest.class_names)} text records (d={encoder.dim}) to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="lse-extract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (("extract-images", cmd_extract_images), ("extract-text", cmd_extract_text)):
        p = sub.add_parser(name)
        p.add_argument("--dataset")
        p.add_argument("--classes", help="comma-separated class names (instead of --dataset)")
        p.add_argument("--out", required=True)
        p.add_argument("--registry", help="also write the registry JSON here")
        p.add_argument("--model", default="toy:64")
        p.add_argument("--template", default="a photo of a {}.")
        p.add_argument("--split", default="train")
        p.add_argument("--task-id", type=int, default=0)
        p.add_argument("--class-id-base", type=int, default=0)
        p.add_argument("--on-error", choices=("skip", "fail"), default="fail")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, EncoderError, LseFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
