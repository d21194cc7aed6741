"""Dense float64 autodiff engine, models, optimizer and training loop."""

from .models import Model, ModelSpec, Parameter, accuracy, build_model, forward, init_model, predict
from .optim import AdamW, lr_schedule
from .tensor import Tensor, cross_entropy, softmax
from .training import Checkpoint, DataStream, NumericError, fresh_checkpoint, train_steps

__all__ = [
    "AdamW", "Checkpoint", "DataStream", "Model", "ModelSpec", "NumericError", "Parameter", "Tensor",
    "accuracy", "build_model", "cross_entropy", "forward", "fresh_checkpoint", "init_model", "lr_schedule",
    "predict", "softmax", "train_steps",
]
