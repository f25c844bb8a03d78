"""Dataset manifest: JSON index plus one OWT1 tensor per image"""

from __future__ import annotations

from pathlib import Path

from core.domain import Box, Category, CategoryTaxonomy, DatasetSplit, Role, Sample, SplitRole, ToyImage
from core.errors import ConfigError
from libraries.io_utils import load_json, load_tensor, save_json, save_tensor
from libraries.utils import default_logger

MANIFEST_NAME = "manifest.json"
_PARTS = (("labeled", SplitRole.LABELED), ("unlabeled", SplitRole.UNLABELED),
          ("val", SplitRole.VAL), ("test", SplitRole.TEST))


def save_split(split: DatasetSplit, out_dir, meta: dict | None = None) -> str:
    """
    Writes images/<sample_id>.owt for every sample and a manifest.json index.

    Args:
        split (DatasetSplit): The dataset to persist.
        out_dir (str): Target directory (created if missing).
        meta (dict, optional): Extra JSON-serialisable fields, e.g. the generator config.

    Returns:
        str: The manifest path.
    """

    out_dir = Path(out_dir)
    default_logger.info(f"\tSaving dataset to {out_dir}")

    records = []
    for part, _ in _PARTS:
        for sample in split.part(part):
            rel_path = f"images/{sample.sample_id}.owt"
            save_tensor(sample.image.data, out_dir / rel_path)
            records.append({
                "sample_id": sample.sample_id,
                "image": rel_path,
                "label": int(sample.gt_label),
                "split": sample.split_role.value,
                "boxes": [list(b.as_tuple()) for b in sample.gt_boxes],
            })

    manifest = {
        "format": "owsol-dataset-1",
        "meta": meta or {},
        "taxonomy": [{"category_id": c.category_id, "family_id": c.family_id, "role": c.role.value}
                     for c in split.taxonomy.categories],
        "samples": records,
    }

    return save_json(manifest, out_dir / MANIFEST_NAME)


def load_split(path) -> DatasetSplit:
    """
    Loads a dataset written by save_split.

    Args:
        path (str): Dataset directory or its manifest.json.

    Raises:
        ConfigError: If no manifest exists at the path.
    """

    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.is_file():
        raise ConfigError(f"Dataset manifest not found: {manifest_path}")

    manifest = load_json(manifest_path)
    root = manifest_path.parent

    taxonomy = CategoryTaxonomy(tuple(
        Category(int(c["category_id"]), int(c["family_id"]), Role(c["role"])) for c in manifest["taxonomy"]
    ))

    parts = {name: [] for name, _ in _PARTS}
    by_role = {role.value: name for name, role in _PARTS}
    for record in manifest["samples"]:
        split_role = SplitRole(record["split"])
        sample = Sample(
            sample_id=record["sample_id"],
            image=ToyImage.from_array(load_tensor(root / record["image"])),
            gt_label=int(record["label"]),
            gt_boxes=tuple(Box(*map(int, b)) for b in record["boxes"]),
            split_role=split_role,
        )
        parts[by_role[split_role.value]].append(sample)

    split = DatasetSplit(taxonomy=taxonomy, **parts)
    default_logger.info(f"\tLoaded dataset {root}: {len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, "
                        f"{len(split.val)} val, {len(split.test)} test")

    return split


def load_meta(path) -> dict:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    return load_json(manifest_path).get("meta", {})
