"""Split and taxonomy invariants, reported as data"""

from __future__ import annotations

from dataclasses import dataclass

from core.domain import DatasetSplit, Role, SplitRole

PART_ROLES = {"labeled": SplitRole.LABELED, "unlabeled": SplitRole.UNLABELED, "val": SplitRole.VAL,
              "test": SplitRole.TEST}


@dataclass(frozen=True)
class Violation:
    rule: str
    offending_id: str


def validate_split(split: DatasetSplit) -> list:
    """
    Checks every CategoryTaxonomy and DatasetSplit invariant.

    Args:
        split (DatasetSplit): The split to check.

    Returns:
        list: Violation records, empty iff the split is well formed. The order is stable
        (taxonomy rules first, then samples in split order).
    """

    violations = []
    taxonomy = split.taxonomy

    seen = set()
    for category in taxonomy.categories:
        if category.category_id in seen:
            violations.append(Violation("DuplicateCategoryId", str(category.category_id)))
        seen.add(category.category_id)

    known_families = {c.family_id for c in taxonomy.categories if c.role == Role.KNOWN}
    for category in taxonomy.categories:
        if category.role == Role.NOVS and category.family_id not in known_families:
            violations.append(Violation("NovSNeedsKnownFamily", str(category.category_id)))
        if category.role == Role.NOVD and category.family_id in known_families:
            violations.append(Violation("NovDSharesKnownFamily", str(category.category_id)))

    roles = {c.category_id: c.role for c in taxonomy.categories}
    sample_ids = set()
    for part in PART_ROLES:
        for sample in split.part(part):
            if sample.sample_id in sample_ids:
                violations.append(Violation("DuplicateSampleId", sample.sample_id))
            sample_ids.add(sample.sample_id)
            if sample.split_role != PART_ROLES[part]:
                violations.append(Violation("SplitRoleMismatch", sample.sample_id))

            role = roles.get(sample.gt_label)
            if role is None:
                violations.append(Violation("UnknownLabel", sample.sample_id))
            elif part == "labeled" and role != Role.KNOWN:
                violations.append(Violation("LabeledMustBeKnown", sample.sample_id))

            if not sample.gt_boxes:
                violations.append(Violation("MissingBox", sample.sample_id))
            image = sample.image
            for box in sample.gt_boxes:
                if not box.inside(image.width, image.height):
                    violations.append(Violation("BoxOutOfBounds", sample.sample_id))

    return violations
