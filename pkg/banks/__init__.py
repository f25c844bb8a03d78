from banks.rep_bank import RepBank, init_rep_bank
from banks.centroid_bank import CentroidBank, nearest_centroids, nearest_indices, rebuild_centroids
