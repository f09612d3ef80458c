from .bundle import LAYOUTS, ModelBundle, flat_layout, grid_layout, train_bundle
from .gmm import DiagonalGmm, GmmBandModel, fit_diagonal_gmm, gmm_score, gmm_train
from .mlp import (
    MlpBandModel,
    TrainingDivergedError,
    TrainSchedule,
    mlp_forward,
    mlp_gradient,
    mlp_train,
)
from .normalizer import Normalizer, fit_normalizer

__all__ = [
    "LAYOUTS", "ModelBundle", "flat_layout", "grid_layout", "train_bundle",
    "DiagonalGmm", "GmmBandModel", "fit_diagonal_gmm", "gmm_score", "gmm_train",
    "MlpBandModel", "TrainingDivergedError", "TrainSchedule", "mlp_forward", "mlp_gradient",
    "mlp_train", "Normalizer", "fit_normalizer",
]
