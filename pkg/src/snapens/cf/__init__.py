"""Base collaborative-filtering models that emit snapshot models."""

from .factorization import FMModel, FMRegressor, MFModel, RSVD, train_fm_sgd, train_rsvd
from .knn import KNNModel, KNNRecommender, cosine_similarity, knn_snapshots, similarity_table
from .schedule import SnapshotSchedule, cyclic_lr

__all__ = [
    "FMModel", "FMRegressor", "MFModel", "RSVD", "train_fm_sgd", "train_rsvd",
    "KNNModel", "KNNRecommender", "cosine_similarity", "knn_snapshots", "similarity_table",
    "SnapshotSchedule", "cyclic_lr",
]
