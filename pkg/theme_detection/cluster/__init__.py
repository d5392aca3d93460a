from theme_detection.cluster.elbow import ElbowGridError, elbow_select
from theme_detection.cluster.hdbscan import hdbscan_fit
from theme_detection.cluster.kmeans import ClusterCountError, distortion, kmeans_fit

__all__ = [
    "ClusterCountError",
    "ElbowGridError",
    "distortion",
    "elbow_select",
    "hdbscan_fit",
    "kmeans_fit",
]
