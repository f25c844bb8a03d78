"""Domain types shared by every package"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from core.errors import ConfigInvalid, LabelAccessDenied, UnknownCategory


class Role(str, Enum):
    KNOWN = "Known"
    NOVS = "NovS"
    NOVD = "NovD"


class SplitRole(str, Enum):
    LABELED = "Labeled"
    UNLABELED = "Unlabeled"
    VAL = "Val"
    TEST = "Test"


@dataclass(frozen=True)
class ToyImage:
    """
    A small raster with intensities in [0, 1].

    Attributes:
        width (int): Pixels per row.
        height (int): Rows.
        channels (int): 1 for grayscale.
        data (np.ndarray): float32 array of shape (channels, height, width), read-only.
    """

    width: int
    height: int
    channels: int
    data: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.size != self.width * self.height * self.channels:
            raise ValueError(f"Image data has {data.size} values, expected "
                             f"{self.width}x{self.height}x{self.channels}")
        data = data.reshape(self.channels, self.height, self.width)
        if not np.all(np.isfinite(data)) or data.min(initial=0.0) < 0.0 or data.max(initial=0.0) > 1.0:
            raise ValueError("Image intensities must be finite and inside [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "ToyImage":
        """Builds an image from a (H, W) or (C, H, W) array."""
        array = np.asarray(array, dtype=np.float32)
        if array.ndim == 2:
            array = array[None]
        channels, height, width = array.shape
        return cls(width=width, height=height, channels=channels, data=array)


@dataclass(frozen=True)
class Box:
    """Half-open pixel box [x_min, x_max) x [y_min, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"Degenerate box {self.as_tuple()}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def inside(self, width, height) -> bool:
        return 0 <= self.x_min and 0 <= self.y_min and self.x_max <= width and self.y_max <= height


@dataclass(frozen=True)
class Category:
    category_id: int
    family_id: int
    role: Role


@dataclass(frozen=True)
class CategoryTaxonomy:
    """
    The open-world label space: known classes, novel classes sharing a family with a
    known class (NovS) and novel classes from unseen families (NovD).
    """

    categories: tuple

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))

    def _lookup(self):
        return {c.category_id: c for c in self.categories}

    def role_of(self, cat) -> Role:
        return role_of(self, cat)

    def family_of(self, cat) -> int:
        category = self._lookup().get(cat)
        if category is None:
            raise UnknownCategory(f"Category {cat} is not part of the taxonomy")
        return category.family_id

    def ids_with_role(self, role: Role) -> list:
        return sorted(c.category_id for c in self.categories if c.role == role)

    @property
    def known_ids(self) -> list:
        return self.ids_with_role(Role.KNOWN)

    @property
    def nov_s_ids(self) -> list:
        return self.ids_with_role(Role.NOVS)

    @property
    def nov_d_ids(self) -> list:
        return self.ids_with_role(Role.NOVD)

    @property
    def novel_ids(self) -> list:
        return sorted(self.nov_s_ids + self.nov_d_ids)

    @property
    def all_ids(self) -> list:
        return sorted(c.category_id for c in self.categories)

    def without(self, category_ids: Iterable[int]) -> "CategoryTaxonomy":
        dropped = set(category_ids)
        return CategoryTaxonomy(tuple(c for c in self.categories if c.category_id not in dropped))


def role_of(taxonomy: CategoryTaxonomy, cat) -> Role:
    """
    Returns the stored role of a category.

    Raises:
        UnknownCategory: If the category id is absent from the taxonomy.
    """

    for category in taxonomy.categories:
        if category.category_id == cat:
            return category.role
    raise UnknownCategory(f"Category {cat} is not part of the taxonomy")


@dataclass(frozen=True)
class Sample:
    """
    One image with its planted object.

    gt_label is stored for every sample so evaluation can read it directly; training code
    must go through LabelGate, which refuses samples outside the labeled set.
    """

    sample_id: str
    image: ToyImage
    gt_label: int
    gt_boxes: tuple
    split_role: SplitRole

    def __post_init__(self):
        object.__setattr__(self, "gt_boxes", tuple(self.gt_boxes))


class LabelGate:
    """Capability-gated access to training labels, with an audit trail of every id read."""

    def __init__(self) -> None:
        self.accessed_ids = set()

    def label_of(self, sample: Sample) -> int:
        if sample.split_role != SplitRole.LABELED:
            raise LabelAccessDenied(f"Sample {sample.sample_id} is {sample.split_role.value}, "
                                    "its label is not visible to training")
        self.accessed_ids.add(sample.sample_id)
        return sample.gt_label


@dataclass(frozen=True)
class DatasetSplit:
    """
    Attributes:
        labeled (tuple): D_l, samples of known classes with visible labels.
        unlabeled (tuple): D_u, samples of any class.
        val (tuple): validation samples (exposed, no protocol attached).
        test (tuple): evaluation samples with role-tagged labels.
        taxonomy (CategoryTaxonomy): the label space.
    """

    labeled: tuple
    unlabeled: tuple
    val: tuple
    test: tuple
    taxonomy: CategoryTaxonomy

    def __post_init__(self):
        for name in ("labeled", "unlabeled", "val", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def training(self) -> tuple:
        """D = D_l followed by D_u."""
        return self.labeled + self.unlabeled

    def part(self, name) -> tuple:
        if name not in ("labeled", "unlabeled", "val", "test"):
            raise ValueError(f"Unknown split part '{name}'")
        return getattr(self, name)

    def without_categories(self, category_ids: Iterable[int], keep_test=True) -> "DatasetSplit":
        """Drops the given categories from the training parts (and optionally from val/test)."""
        dropped = set(category_ids)

        def keep(samples):
            return tuple(s for s in samples if s.gt_label not in dropped)

        return replace(self,
                       labeled=keep(self.labeled),
                       unlabeled=keep(self.unlabeled),
                       val=self.val if keep_test else keep(self.val),
                       test=self.test if keep_test else keep(self.test))


@dataclass(frozen=True)
class HyperParams:
    """
    Optimisation and loss knobs.

    n_neg=None uses every centroid outside the positive set as a negative.
    """

    tau: float = 0.007
    n_z: int = 12
    n_c: int = 64
    l_pos: int = 5
    alpha: float = 1.0
    beta: float = 0.5
    n_neg: Optional[int] = None
    momentum_coef: float = 0.999
    lr: float = 0.01
    weight_decay: float = 0.0001
    sgd_momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigInvalid(f"tau must be > 0, got {self.tau}")
        if not 1 <= self.l_pos < self.n_c:
            raise ConfigInvalid(f"Need 1 <= l_pos < n_c, got l_pos={self.l_pos}, n_c={self.n_c}")
        if self.n_neg is not None and not 0 <= self.n_neg <= self.n_c - self.l_pos:
            raise ConfigInvalid(f"n_neg={self.n_neg} must lie in [0, n_c - l_pos = {self.n_c - self.l_pos}]")
        if not 0 <= self.momentum_coef < 1:
            raise ConfigInvalid(f"momentum_coef must lie in [0, 1), got {self.momentum_coef}")
        if self.n_z < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigInvalid("n_z, batch_size and epochs must be >= 1")

    @property
    def negatives(self) -> int:
        return self.n_c - self.l_pos if self.n_neg is None else self.n_neg

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
