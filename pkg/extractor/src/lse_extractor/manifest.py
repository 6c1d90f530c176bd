"""Extraction manifest: what to extract, how to template class names."""

import os
from dataclasses import dataclass, field

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


class ManifestError(Exception):
    pass


@dataclass
class ExtractionManifest:
    dataset: str                 # dataset name or directory
    split: str = "train"
    task_id: int = 0
    class_names: list = field(default_factory=list)
    template: str = "a photo of a {}."
    class_id_base: int = 0

    def __post_init__(self):
        if self.template.count("{}") != 1:
            raise ManifestError(
                f"template must contain exactly one {{}} placeholder: {self.template!r}"
            )
        for name in self.class_names:
            if not str(name).strip():
                raise ManifestError("class names must be non-empty")

    def class_ids(self):
        return list(range(self.class_id_base, self.class_id_base + len(self.class_names)))

    def sentences(self):
        return [self.template.format(name) for name in self.class_names]

    def registry_dict(self):
        """Registry sidecar in the engine's schema."""
        return {
            "tasks": [
                {
                    "task_id": self.task_id,
                    "class_ids": self.class_ids(),
                    "names": list(self.class_names),
                }
            ]
        }


def manifest_from_directory(dataset_dir, split="train", task_id=0,
                            template="a photo of a {}.", class_id_base=0):
    """One class per subdirectory (sorted by name); images live inside."""
    if not os.path.isdir(dataset_dir):
        raise ManifestError(f"dataset directory not found: {dataset_dir}")
    names = sorted(
        entry for entry in os.listdir(dataset_dir)
        if os.path.isdir(os.path.join(dataset_dir, entry))
    )
    if not names:
        raise ManifestError(f"no class subdirectories under {dataset_dir}")
    return ExtractionManifest(
        dataset=dataset_dir,
        split=split,
        task_id=task_id,
        class_names=names,
        template=template,
        class_id_base=class_id_base,
    )


def image_paths(manifest: ExtractionManifest):
    """(class_id, path) pairs in class order, file names sorted."""
    out = []
    for cid, name in zip(manifest.class_ids(), manifest.class_names):
        class_dir = os.path.join(manifest.dataset, name)
        if not os.path.isdir(class_dir):
            raise ManifestError(f"missing class directory: {class_dir}")
        for fname in sorted(os.listdir(class_dir)):
            if fname.lower().endswith(IMAGE_EXTENSIONS):
                out.append((cid, os.path.join(class_dir, fname)))
    if not out:
        raise ManifestError(f"no images found under {manifest.dataset}")
    return out
