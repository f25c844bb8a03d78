from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from core.domain import Box, Category, CategoryTaxonomy, DatasetSplit, Role, Sample, SplitRole, ToyImage
from core.errors import ConfigInvalid
from libraries.utils import default_logger, get_workers, make_rng

SHAPES = ("blob", "bar", "ring", "cross", "checker")
# Known families draw from the first three shapes; NovD families only from the last two,
# so no NovD family can coincide with a known one.
KNOWN_SHAPES = ("blob", "bar", "ring")
NOVD_SHAPES = ("cross", "checker")
INTENSITY_BANDS = (0.45, 0.70, 0.95)

_CLASS_STREAM = 1
_SAMPLE_STREAM = 2
_PART_CODES = {"labeled": 0, "unlabeled": 1, "val": 2, "test": 3}
_PART_PREFIX = {"labeled": "l", "unlabeled": "u", "val": "v", "test": "t"}


@dataclass(frozen=True)
class FamilyPrototype:
    family_id: int
    base_shape: str
    base_scale: float
    base_intensity: float


@dataclass(frozen=True)
class ClassSpec:
    """A category: its family prototype plus class-specific shape perturbation."""

    category_id: int
    family_id: int
    role: Role
    shape: str
    scale: float
    aspect: float
    intensity: float
    thickness: float
    bias_x: float
    bias_y: float
    spread: float


@dataclass(frozen=True)
class GenConfig:
    """
    Attributes:
        n_known, n_nov_s, n_nov_d (int): Category counts per role.
        samples_per_class (int): Training samples per category (labeled + unlabeled).
        image_side (int): Square image side in pixels.
        noise_std (float): Gaussian pixel noise.
        distractor_prob (float): Probability of a low-contrast distractor shape.
        labeled_fraction_of_known (float): Share of a known class's training samples that go to D_l.
        val_per_class, test_per_class (int): Extra samples per category for val/test.
        classes_per_family (int): Target family size before the family pool is exhausted.
        seed (int): Generator seed.
    """

    n_known: int = 12
    n_nov_s: int = 6
    n_nov_d: int = 6
    samples_per_class: int = 40
    image_side: int = 16
    noise_std: float = 0.05
    distractor_prob: float = 0.2
    labeled_fraction_of_known: float = 0.5
    val_per_class: int = 4
    test_per_class: int = 10
    classes_per_family: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_known < 1:
            raise ConfigInvalid("n_known must be >= 1")
        if self.n_nov_s < 0 or self.n_nov_d < 0:
            raise ConfigInvalid("Novel category counts must be >= 0")
        if self.n_nov_s > self.n_known:
            raise ConfigInvalid(f"n_nov_s={self.n_nov_s} exceeds n_known={self.n_known}: "
                                "each NovS class borrows a known family")
        if self.samples_per_class < 1 or self.classes_per_family < 1:
            raise ConfigInvalid("samples_per_class and classes_per_family must be >= 1")
        if self.val_per_class < 0 or self.test_per_class < 0:
            raise ConfigInvalid("val_per_class and test_per_class must be >= 0")
        if self.image_side < 4:
            raise ConfigInvalid("image_side must be >= 4")
        if self.noise_std < 0:
            raise ConfigInvalid("noise_std must be >= 0")
        for name in ("distractor_prob", "labeled_fraction_of_known"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigInvalid(f"{name} must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _shape_mask(shape, height, width, thickness):
    v = (2.0 * (np.arange(height) + 0.5) / height - 1.0)[:, None]
    u = (2.0 * (np.arange(width) + 0.5) / width - 1.0)[None, :]
    r2 = u ** 2 + v ** 2
    # A stroke is never thinner than one pixel row/column.
    t_v = max(thickness, 1.0 / height)
    t_u = max(thickness, 1.0 / width)

    if shape == "blob":
        mask = r2 <= 1.0
    elif shape == "bar":
        mask = np.broadcast_to(np.abs(v) <= t_v, (height, width))
    elif shape == "ring":
        mask = (r2 <= 1.0) & (r2 >= 0.25)
    elif shape == "cross":
        mask = (np.abs(u) <= t_u) | (np.abs(v) <= t_v)
    elif shape == "checker":
        mask = (np.floor((u + 1.0) * 2.0) + np.floor((v + 1.0) * 2.0)) % 2 == 0
    else:
        raise ConfigInvalid(f"Unknown shape '{shape}'")

    return np.array(mask, dtype=bool)


def object_raster(spec: ClassSpec, side: int):
    """
    Renders the class object in its own local frame.

    Returns:
        tuple: (values, mask), values already scaled by the class intensity.
    """

    width = int(np.clip(round(spec.scale * side), 2, side))
    height = int(np.clip(round(spec.scale * spec.aspect * side), 2, side))
    mask = _shape_mask(spec.shape, height, width, spec.thickness)

    return mask * np.float32(spec.intensity), mask


def _tight_bounds(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def render_template(spec: ClassSpec, box: Box, side: int):
    """
    Renders the noise-free class object so its tight box starts at box's top-left corner.

    Returns:
        np.ndarray | None: The (side, side) raster, or None when the object would leave the image.
    """

    values, mask = object_raster(spec, side)
    r0, _, c0, _ = _tight_bounds(mask)
    y0, x0 = box.y_min - r0, box.x_min - c0
    height, width = mask.shape
    if y0 < 0 or x0 < 0 or y0 + height > side or x0 + width > side:
        return None

    canvas = np.zeros((side, side), dtype=np.float32)
    canvas[y0:y0 + height, x0:x0 + width] = values
    return canvas


class SyntheticGenerator:
    """
    A class to build a family-structured open-world toy dataset.

    Attributes:
        config (GenConfig): Generator settings.
        families (dict): family_id -> FamilyPrototype.
        classes (list): ClassSpec per category, ordered by category_id.
        taxonomy (CategoryTaxonomy): The generated label space.
    """

    def __init__(self, config: GenConfig) -> None:
        self.config = config
        self.families = {}
        self.classes = []
        self._build_taxonomy()
        self.taxonomy = CategoryTaxonomy(tuple(Category(c.category_id, c.family_id, c.role) for c in self.classes))

    def _build_taxonomy(self):
        cfg = self.config
        per_family = cfg.classes_per_family

        n_known_families = min(len(KNOWN_SHAPES) * len(INTENSITY_BANDS), math.ceil(cfg.n_known / per_family))
        for f in range(n_known_families):
            self.families[f] = FamilyPrototype(f, KNOWN_SHAPES[f % len(KNOWN_SHAPES)], 0.5,
                                               INTENSITY_BANDS[(f // len(KNOWN_SHAPES)) % len(INTENSITY_BANDS)])

        n_novd_families = 0
        if cfg.n_nov_d:
            n_novd_families = min(len(NOVD_SHAPES) * len(INTENSITY_BANDS), math.ceil(cfg.n_nov_d / per_family))
        for g in range(n_novd_families):
            family_id = n_known_families + g
            self.families[family_id] = FamilyPrototype(family_id, NOVD_SHAPES[g % len(NOVD_SHAPES)], 0.5,
                                                       INTENSITY_BANDS[(g // len(NOVD_SHAPES)) % len(INTENSITY_BANDS)])

        assignments = []
        for i in range(cfg.n_known):
            assignments.append((Role.KNOWN, i % n_known_families))
        for j in range(cfg.n_nov_s):
            assignments.append((Role.NOVS, j % n_known_families))
        for j in range(cfg.n_nov_d):
            assignments.append((Role.NOVD, n_known_families + j % n_novd_families))

        members = {}
        for cid, (_, family_id) in enumerate(assignments):
            members.setdefault(family_id, []).append(cid)

        for cid, (role, family_id) in enumerate(assignments):
            family = self.families[family_id]
            siblings = members[family_id]
            rank = siblings.index(cid)
            spread = rank / max(len(siblings) - 1, 1)
            rng = make_rng(cfg.seed, _CLASS_STREAM, cid)
            self.classes.append(ClassSpec(
                category_id=cid,
                family_id=family_id,
                role=role,
                shape=family.base_shape,
                scale=family.base_scale * (0.8 + 0.5 * spread),
                aspect=1.0 if rank % 2 == 0 else 0.65,
                intensity=float(np.clip(family.base_intensity + 0.1 * (spread - 0.5), 0.15, 1.0)),
                thickness=0.3 + 0.15 * (rank % 2),
                bias_x=float(rng.uniform(0.2, 0.8)),
                bias_y=float(rng.uniform(0.2, 0.8)),
                spread=0.35,
            ))

        default_logger.info(f"\tBuilt taxonomy: {len(self.families)} families, {len(self.classes)} categories")

    def _place(self, rng, spec: ClassSpec, height, width):
        side = self.config.image_side
        free_x, free_y = side - width, side - height
        x0 = int(np.clip(round(spec.bias_x * free_x + rng.normal(0.0, spec.spread * free_x + 1e-9)), 0, free_x))
        y0 = int(np.clip(round(spec.bias_y * free_y + rng.normal(0.0, spec.spread * free_y + 1e-9)), 0, free_y))
        return x0, y0

    def render_sample(self, spec: ClassSpec, rng, sample_id="sample", split_role=SplitRole.UNLABELED) -> Sample:
        """
        Renders one image of a class.

        Args:
            spec (ClassSpec): The class to draw.
            rng (np.random.Generator): Per-sample generator; identical state gives identical pixels.
            sample_id (str): Identifier stored on the sample.
            split_role (SplitRole): Split tag stored on the sample.

        Returns:
            Sample: Image with one foreground object, optional distractor and pixel noise; gt box is
            the tight bound of the foreground support.
        """

        cfg = self.config
        side = cfg.image_side
        canvas = np.zeros((side, side), dtype=np.float64)

        if cfg.distractor_prob > 0 and rng.random() < cfg.distractor_prob:
            others = [f for f in sorted(self.families) if f != spec.family_id]
            if others:
                family = self.families[others[int(rng.integers(len(others)))]]
                distractor = ClassSpec(-1, family.family_id, Role.NOVD, family.base_shape, 0.3, 1.0,
                                       0.3 * family.base_intensity, 0.3, 0.5, 0.5, 1.0)
                d_values, _ = object_raster(distractor, side)
                dh, dw = d_values.shape
                dy, dx = int(rng.integers(side - dh + 1)), int(rng.integers(side - dw + 1))
                canvas[dy:dy + dh, dx:dx + dw] = d_values

        values, mask = object_raster(spec, side)
        height, width = mask.shape
        x0, y0 = self._place(rng, spec, height, width)
        window = canvas[y0:y0 + height, x0:x0 + width]
        canvas[y0:y0 + height, x0:x0 + width] = np.where(mask, values, window)

        if cfg.noise_std > 0:
            canvas = canvas + rng.normal(0.0, cfg.noise_std, size=canvas.shape)
        canvas = np.clip(canvas, 0.0, 1.0)

        r0, r1, c0, c1 = _tight_bounds(mask)
        box = Box(int(x0 + c0), int(y0 + r0), int(x0 + c1), int(y0 + r1))

        return Sample(sample_id=sample_id, image=ToyImage.from_array(canvas), gt_label=spec.category_id,
                      gt_boxes=(box,), split_role=split_role)

    def _plan(self):
        cfg = self.config
        plan = []
        n_labeled = int(round(cfg.labeled_fraction_of_known * cfg.samples_per_class))
        for spec in self.classes:
            for index in range(cfg.samples_per_class):
                if spec.role == Role.KNOWN and index < n_labeled:
                    plan.append(("labeled", spec, index))
                else:
                    plan.append(("unlabeled", spec, index))
            plan.extend(("val", spec, index) for index in range(cfg.val_per_class))
            plan.extend(("test", spec, index) for index in range(cfg.test_per_class))
        return plan

    def _render_planned(self, item):
        part, spec, index = item
        rng = make_rng(self.config.seed, _SAMPLE_STREAM, _PART_CODES[part], spec.category_id, index)
        sample_id = f"{_PART_PREFIX[part]}-{spec.category_id:03d}-{index:04d}"
        split_role = {"labeled": SplitRole.LABELED, "unlabeled": SplitRole.UNLABELED,
                      "val": SplitRole.VAL, "test": SplitRole.TEST}[part]
        return part, self.render_sample(spec, rng, sample_id, split_role)

    def generate(self, workers=None) -> DatasetSplit:
        """Renders every planned sample (in parallel when workers > 1) and assembles the split."""

        plan = self._plan()
        default_logger.info(f"\tRendering {len(plan)} samples")

        workers = get_workers(workers)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rendered = list(pool.map(self._render_planned, plan))
        else:
            rendered = [self._render_planned(item) for item in plan]

        parts = {name: [] for name in _PART_CODES}
        for part, sample in rendered:
            parts[part].append(sample)

        split = DatasetSplit(taxonomy=self.taxonomy, **parts)
        default_logger.info(f"\tGenerated split: {len(split.labeled)} labeled, {len(split.unlabeled)} unlabeled, "
                            f"{len(split.val)} val, {len(split.test)} test")
        return split

    def describe(self) -> dict:
        """JSON-serialisable description of families and classes, stored in the manifest."""

        return {
            "config": self.config.as_dict(),
            "families": [asdict(f) for f in self.families.values()],
            "classes": [{**asdict(c), "role": c.role.value} for c in self.classes],
        }


def generate_dataset(config: GenConfig, workers=None) -> DatasetSplit:
    """
    Generates an open-world toy dataset.

    Args:
        config (GenConfig): Generator settings (validated on construction).
        workers (int, optional): Rendering threads.

    Returns:
        DatasetSplit: Reproducible from config.seed.
    """

    return SyntheticGenerator(config).generate(workers=workers)
