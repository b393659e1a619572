"""Neural snapshot ensemble: network, training loop and estimator."""

from .adam import Adam, adam_step
from .network import (
    Batch, ForwardTrace, NeighborTables, NeuSEConfig, SoftLabel, backward, bias_project,
    embed_pair, ensemble_predict, forward, init_params, kl_loss, memory_attend,
    optimal_tags, soft_label_matrix, soft_labels,
)
from .persist import load_params, save_params
from .training import SoftLabelEnsemble, validation_score
from .estimator import NeuSE

__all__ = [
    "Adam", "adam_step", "Batch", "ForwardTrace", "NeighborTables", "NeuSEConfig", "SoftLabel",
    "backward", "bias_project", "embed_pair", "ensemble_predict", "forward", "init_params",
    "kl_loss", "memory_attend", "optimal_tags", "soft_label_matrix", "soft_labels",
    "load_params", "save_params", "SoftLabelEnsemble", "validation_score", "NeuSE",
]
