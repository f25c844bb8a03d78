from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from core.domain import Box
from core.errors import EmptyComponent, ShapeMismatch
from encoder.encoder_class import FeatureMap

# 8-connectivity
_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ActivationMap:
    """
    Raw (h, w) scores before normalisation.

    Attributes:
        data (np.ndarray): Score grid.
        provenance (str): "cam(<class>)" or "gcam(<centroid>)".
    """

    data: np.ndarray = field(repr=False, compare=False)
    provenance: str = "gcam"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def normalized(self) -> np.ndarray:
        low, high = float(self.data.min()), float(self.data.max())
        if high - low <= 0:
            return np.zeros_like(self.data)
        return (self.data - low) / (high - low)


@dataclass(frozen=True)
class BoxPrediction:
    sample_id: str
    cluster_id: int
    box: Box
    score: float


def _project_map(m: FeatureMap, vector, provenance) -> ActivationMap:
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vector.shape[0] != m.d1:
        raise ShapeMismatch(f"Vector of length {vector.shape[0]} cannot weight a {m.d1}-channel feature map")
    data = np.tensordot(vector, np.asarray(m.data, dtype=np.float64), axes=(0, 0))
    if not np.all(np.isfinite(data)):
        raise ValueError("Activation map has non-finite values")
    return ActivationMap(data, provenance)


def cam(m: FeatureMap, w_k, class_id=None) -> ActivationMap:
    """p(i, j) = w_k . m(:, i, j) for a classification-head column w_k."""
    return _project_map(m, w_k, f"cam({class_id})")


def gcam(m: FeatureMap, c_x, centroid_id=None) -> ActivationMap:
    """p(i, j) = c_x . m(:, i, j) for a feature-space centroid c_x."""
    return _project_map(m, c_x, f"gcam({centroid_id})")


def binarize(activation: ActivationMap, theta: float) -> np.ndarray:
    """
    Min-max normalises the map and keeps cells >= theta.

    A constant map gives an all-ones mask at theta = 0 and an empty mask otherwise.
    """

    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    data = np.asarray(activation.data, dtype=np.float64)
    low, high = float(data.min()), float(data.max())
    if high - low <= 0:
        return np.full(data.shape, theta == 0.0, dtype=bool)

    return (data - low) / (high - low) >= theta


def largest_component(mask) -> np.ndarray:
    """The 8-connected component with most cells; ties go to the first one in scan order."""

    mask = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(mask, structure=_STRUCTURE)
    if count == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]

    return labels == int(np.argmax(sizes)) + 1


def component_box(component, map_dims, image_dims) -> Box:
    """
    Tight bound of the component in map cells, scaled to image pixels.

    Args:
        component (np.ndarray): Boolean (h, w) mask.
        map_dims (tuple): (h, w) of the map.
        image_dims (tuple): (height, width) of the image.

    Raises:
        EmptyComponent: If the component has no cells.
    """

    component = np.asarray(component, dtype=bool)
    rows, cols = np.nonzero(component)
    if rows.size == 0:
        raise EmptyComponent("Cannot box an empty component")

    map_h, map_w = map_dims
    image_h, image_w = image_dims
    scale_y, scale_x = image_h / map_h, image_w / map_w

    return Box(x_min=int(round(cols.min() * scale_x)), y_min=int(round(rows.min() * scale_y)),
               x_max=int(round((cols.max() + 1) * scale_x)), y_max=int(round((rows.max() + 1) * scale_y)))
