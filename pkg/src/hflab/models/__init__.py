from .linear import LinearModel, LinearParams, LossKind
from .stumps import StumpEnsemble, train_boosted_stumps
from .tlstm import TlstmModel, TlstmParams, g_decay
from .transformer import TransformerModel, TransformerParams
from .training import (
    Optimizer,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    train,
)

__all__ = [
    "LinearModel",
    "LinearParams",
    "LossKind",
    "StumpEnsemble",
    "train_boosted_stumps",
    "TlstmModel",
    "TlstmParams",
    "g_decay",
    "TransformerModel",
    "TransformerParams",
    "Optimizer",
    "TrainConfig",
    "TrainResult",
    "train",
    "predict_proba",
    "save_checkpoint",
    "load_checkpoint",
]
