from .model import (EnsemblePrediction, ModelConfig, Prediction,
                    ensemble_from_predictions, ensemble_predict, flatten_params,
                    forward_loss, gat_layer, gradients, init_params, lstm_embed,
                    nll_loss, param_layout, pool_and_head, predict,
                    predict_many, unflatten_params)
from .training import (AdamState, ExampleSet, TrainConfig, TrainResult,
                       TrainingDiverged, adam_step, examples_from_records,
                       load_checkpoint, read_history, save_checkpoint, train,
                       write_history)

__all__ = [
    "AdamState", "EnsemblePrediction", "ExampleSet", "ModelConfig",
    "Prediction", "TrainConfig", "TrainResult", "TrainingDiverged",
    "adam_step", "ensemble_from_predictions", "ensemble_predict",
    "examples_from_records", "flatten_params", "forward_loss", "gat_layer",
    "gradients", "init_params", "load_checkpoint", "lstm_embed", "nll_loss",
    "param_layout", "pool_and_head", "predict", "predict_many",
    "read_history", "save_checkpoint", "train", "unflatten_params",
    "write_history",
]
