from cluster.kmeans import PHI_FLOOR, KMeansConfig, KMeansResult, density, kmeans, kmeans_plusplus
from cluster.estimate import ClassCountEstimate, class_means, estimate_class_count
