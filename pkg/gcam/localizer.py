"""Evaluation-corpus clustering in feature space and per-sample box prediction"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from banks.centroid_bank import CentroidBank, nearest_indices
from cluster.kmeans import KMeansConfig, kmeans
from core.errors import ConfigInvalid, EmptyComponent
from encoder.encoder_class import EncoderParams, FeatureMap, forward_batch, forward_map, pool
from gcam.activation import BoxPrediction, binarize, component_box, gcam, largest_component
from libraries.utils import default_logger, get_workers

EVAL_SPACES = ("feature", "projection")
CENTROID_SOURCES = ("test", "train")
DEFAULT_THETA = 0.2


def _params(state) -> EncoderParams:
    """Evaluation runs on the online encoder."""
    return getattr(state, "online", state)


def _normalize_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def blank_reference(state) -> np.ndarray:
    """Pooled feature of an all-zero canvas."""

    params = _params(state)
    cfg = params.config
    return pool(forward_map(params, np.zeros((cfg.channels, cfg.image_side, cfg.image_side))))


@dataclass
class CorpusFeatures:
    """
    Attributes:
        sample_ids (list): Corpus order.
        maps (np.ndarray): (n, d1, h, w) feature maps.
        pooled (np.ndarray): (n, d1) pooled features h.
        z (np.ndarray): (n, d2) projected representations.
        reference (np.ndarray): (d1,) pooled feature of a blank canvas; None means the origin.
    """

    sample_ids: list
    maps: np.ndarray = field(repr=False)
    pooled: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    reference: np.ndarray | None = field(default=None, repr=False)

    @property
    def centered(self) -> np.ndarray:
        """Pooled features measured from the blank canvas."""
        return self.pooled if self.reference is None else self.pooled - self.reference

    def index_of(self, sample_id) -> int:
        return self.sample_ids.index(sample_id)

    def feature_map(self, index) -> FeatureMap:
        d1, h, w = self.maps.shape[1:]
        return FeatureMap(d1=d1, h=h, w=w, data=self.maps[index])


def extract_corpus(state, samples, batch_size=64) -> CorpusFeatures:
    """Runs the encoder over samples in batches and keeps maps, pooled features and representations."""

    params = _params(state)
    grid, d1 = params.config.grid, params.config.d1
    maps, pooled, zs = [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        cache = forward_batch(params, [s.image for s in chunk])
        maps.append(cache.maps.transpose(0, 2, 1).reshape(len(chunk), d1, grid, grid))
        pooled.append(cache.pooled)
        zs.append(cache.z)

    return CorpusFeatures(sample_ids=[s.sample_id for s in samples], maps=np.concatenate(maps),
                          pooled=np.concatenate(pooled), z=np.concatenate(zs), reference=blank_reference(params))


@dataclass
class EvalBank:
    """
    Evaluation centroids lifted to feature space.

    Attributes:
        feature_centroids (np.ndarray): (k, d1) mean centered pooled feature of each cluster's members.
        cluster_ids (list): Cluster id of each row.
        assignment (dict): sample_id -> cluster id.
        space (str): Space the clustering ran in.
        source (str): "test" (fresh clustering) or "train" (nearest training centroid).
        reference (np.ndarray): Blank-canvas pooled feature the centroids are measured from.
    """

    feature_centroids: np.ndarray
    cluster_ids: list
    assignment: dict
    space: str = "feature"
    source: str = "test"
    reference: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    def row_of(self, cluster_id) -> int:
        return self.cluster_ids.index(cluster_id)

    def ranking(self, pooled) -> np.ndarray:
        """Rows by descending cosine between the centered pooled feature and each centroid."""

        h = np.asarray(pooled, dtype=np.float64)
        if self.reference is not None:
            h = h - self.reference
        return nearest_indices(_normalize_rows(self.feature_centroids), h / max(np.linalg.norm(h), 1e-12),
                               self.n_clusters)[0]

    def nearest_cluster(self, pooled) -> int:
        return self.cluster_ids[int(self.ranking(pooled)[0])]


def build_eval_bank(features: CorpusFeatures, k=None, seed=0, eval_space="feature", centroid_source="test",
                    train_bank: CentroidBank | None = None, kmeans_cfg: KMeansConfig | None = None) -> EvalBank:
    """
    Clusters the evaluation corpus and lifts each cluster to feature space as the mean pooled h of its members.

    Pooled features are measured from the blank-canvas reference, so a centroid holds what its members add
    to an empty image. The shift adds the same constant to every cell of a G-CAM map, which binarization
    ignores.

    Args:
        features (CorpusFeatures): Encoded evaluation corpus.
        k (int): Number of evaluation clusters (ignored for centroid_source="train").
        seed (int): k-means seed.
        eval_space (str): "feature" clusters normalised centered h, "projection" clusters z.
        centroid_source (str): "test" re-clusters the corpus, "train" assigns each sample to its nearest
            training centroid.
        train_bank (CentroidBank): Needed for centroid_source="train".

    Raises:
        ConfigInvalid: On an unknown space or source, or a missing training bank.
    """

    if eval_space not in EVAL_SPACES:
        raise ConfigInvalid(f"eval_space must be one of {EVAL_SPACES}, got {eval_space!r}")
    if centroid_source not in CENTROID_SOURCES:
        raise ConfigInvalid(f"centroid_source must be one of {CENTROID_SOURCES}, got {centroid_source!r}")

    centered = features.centered
    if centroid_source == "train":
        if train_bank is None:
            raise ConfigInvalid("centroid_source=train needs the training centroid bank")
        labels = nearest_indices(train_bank.centroids, features.z, 1)[:, 0]
        space = "projection"
    else:
        kmeans_cfg = kmeans_cfg or KMeansConfig(seed=seed)
        points = _normalize_rows(centered) if eval_space == "feature" else features.z
        labels = kmeans(points, int(k), max_iters=kmeans_cfg.max_iters, seed=seed,
                        n_init=kmeans_cfg.n_init).assignment
        space = eval_space

    cluster_ids = sorted(set(int(c) for c in labels))
    centroids = np.stack([centered[labels == c].mean(axis=0) for c in cluster_ids])
    assignment = {sid: int(c) for sid, c in zip(features.sample_ids, labels)}

    default_logger.info(f"\tEvaluation bank: {len(cluster_ids)} clusters over {len(assignment)} samples "
                        f"({space} space, {centroid_source} centroids)")

    return EvalBank(centroids, cluster_ids, assignment, space=space, source=centroid_source,
                    reference=features.reference)


def localize(sample, state, bank: EvalBank, theta=DEFAULT_THETA, feature_map: FeatureMap | None = None
             ) -> BoxPrediction:
    """
    G-CAM box for one sample: gcam with its cluster's lifted centroid, then binarize, largest component
    and box. A map without any cell above theta falls back to the whole image.
    """

    params = _params(state)
    m = feature_map if feature_map is not None else forward_map(params, sample.image)

    cluster_id = bank.assignment.get(sample.sample_id)
    if cluster_id is None:
        cluster_id = bank.nearest_cluster(pool(m))
    activation = gcam(m, bank.feature_centroids[bank.row_of(cluster_id)], cluster_id)

    image_dims = (sample.image.height, sample.image.width)
    try:
        box = component_box(largest_component(binarize(activation, theta)), (m.h, m.w), image_dims)
    except EmptyComponent:
        default_logger.warning(f"\tFlat activation map for {sample.sample_id}, predicting the whole image")
        box = component_box(np.ones((m.h, m.w), dtype=bool), (m.h, m.w), image_dims)

    return BoxPrediction(sample.sample_id, int(cluster_id), box, float(activation.data.max()))


def localize_all(samples, state, bank: EvalBank, theta=DEFAULT_THETA, features: CorpusFeatures | None = None,
                 workers=None) -> dict:
    """sample_id -> BoxPrediction for every sample, fanned out over worker threads."""

    index = {sid: i for i, sid in enumerate(features.sample_ids)} if features is not None else {}

    def run(sample):
        row = index.get(sample.sample_id)
        m = features.feature_map(row) if row is not None else None
        return localize(sample, state, bank, theta, m)

    workers = get_workers(workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            predictions = list(executor.map(run, samples))
    else:
        predictions = [run(sample) for sample in samples]

    return {p.sample_id: p for p in predictions}


def rank_maps(sample, state, bank: EvalBank, ranks=(1, 5, 7), feature_map: FeatureMap | None = None) -> list:
    """
    Activation maps of the rank-th nearest evaluation centroids (1-based), nearest by cosine with the
    centered pooled feature. Ranks beyond the number of clusters are skipped.

    Returns:
        list: (rank, cluster_id, ActivationMap) tuples.
    """

    m = feature_map if feature_map is not None else forward_map(_params(state), sample.image)
    order = bank.ranking(pool(m))

    ranked = []
    for rank in ranks:
        if not 1 <= rank <= bank.n_clusters:
            continue
        row = int(order[rank - 1])
        cluster_id = bank.cluster_ids[row]
        ranked.append((rank, cluster_id, gcam(m, bank.feature_centroids[row], cluster_id)))

    return ranked
